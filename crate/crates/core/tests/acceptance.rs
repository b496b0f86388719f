//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the run
//! exits non-zero if any line is FAIL. Built with `harness = false` so the
//! lines always reach the terminal.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kolmogorov::chain::{build_chain, chain_bound_exponent, verify_chain, HarnackConfig};
use kolmogorov::control::{
    default_kappa_grid, discrete_least_norm_control, kappa_estimate, optimal_control, ConeSpec, ControlProblem,
    KAPPA_GRID_POINTS,
};
use kolmogorov::kernel::{chapman_kolmogorov_residual, convergence_order, normalization_residual, pde_residual, GaussianKernel};
use kolmogorov::mc::{
    diagonal_fit, dilated_grid, estimate_density, mass_concentration, simulate_paths, verify_bounds, BoundsConfig, Scheme,
    SimConfig,
};
use kolmogorov::quadrature::QuadratureSpec;
use kolmogorov::{
    gramian, gramian_by_quadrature, homogeneous_dimension, validate_structure, Coefficients, DiffusionField, OperatorSpec,
    ScalarField, SpaceTimePoint, SystemMatrix,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = o.pass && in_time;
    println!(
        "{} [{id:>2}] {name}: {} ({:.2?} of {:.0?})",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed,
        budget
    );
    pass
}

fn sys(rows: &[f64], m: &[usize]) -> SystemMatrix {
    let d: usize = m.iter().sum();
    validate_structure(DMatrix::from_row_slice(d, d, rows), m).unwrap()
}

fn heat() -> SystemMatrix {
    sys(&[0.0], &[1])
}

fn langevin() -> SystemMatrix {
    sys(&[0.0, 0.0, 1.0, 0.0], &[1, 1])
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn principal(s: &SystemMatrix, lambda: f64) -> OperatorSpec {
    let half = 0.5 * lambda;
    OperatorSpec::new(s.clone(), Coefficients::principal(s.m0(), lambda), half.max(1.0 / half), 0.0).unwrap()
}

fn sinusoid_field(m0: usize) -> DiffusionField {
    DiffusionField::isotropic(m0, ScalarField::time_sinusoid(1.25, 0.75))
}

fn sinusoid(s: &SystemMatrix) -> OperatorSpec {
    let c = Coefficients {
        a: sinusoid_field(s.m0()),
        ..Coefficients::principal(s.m0(), 1.0)
    };
    OperatorSpec::new(s.clone(), c, 2.0, 0.0).unwrap()
}

/// `∫_0^τ e^{sB}σσᵀe^{sBᵀ} ds` for nilpotent `B`, summed term by term from
/// `e^{sB}σ = Σ s^k B^k σ / k!`.
fn nilpotent_gramian(system: &SystemMatrix, tau: f64) -> DMatrix<f64> {
    let b = system.matrix();
    let d = system.dim();
    let mut powers = vec![system.sigma()];
    for k in 1..d {
        let next = b * &powers[k - 1] / k as f64;
        powers.push(next);
    }
    let mut c = DMatrix::zeros(d, d);
    for (k, pk) in powers.iter().enumerate() {
        for (l, pl) in powers.iter().enumerate() {
            let e = (k + l + 1) as i32;
            c += pk * pl.transpose() * (tau.powi(e) / e as f64);
        }
    }
    c
}

fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

/// `max |D(τ^{-1/2})(a − b)D(τ^{-1/2})| / max |D(τ^{-1/2}) b D(τ^{-1/2})|`.
fn dilated_rel(system: &SystemMatrix, tau: f64, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let dil = system.structure().dilation_matrix(1.0 / tau.sqrt()).unwrap();
    let nb = &dil * b * &dil;
    (&dil * (a - b) * &dil).amax() / nb.amax()
}

fn random_langevin_class(rng: &mut ChaCha8Rng) -> SystemMatrix {
    let sub = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    sys(&[rng.random_range(-1.0..1.0), 0.0, sub, rng.random_range(-1.0..1.0)], &[1, 1])
}

fn random_system(rng: &mut ChaCha8Rng) -> SystemMatrix {
    if rng.random_bool(0.5) {
        return random_langevin_class(rng);
    }
    // m = [2, 1]: B1 is the 1×2 row, the upper-right 2×1 block vanishes
    let mut rows = [0.0; 9];
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)] {
        rows[3 * i + j] = rng.random_range(-0.5..0.5);
    }
    rows[6] = rng.random_range(0.5..1.5);
    rows[7] = rng.random_range(-1.0..1.0);
    sys(&rows, &[2, 1])
}

fn random_problem(rng: &mut ChaCha8Rng, system: &SystemMatrix) -> ControlProblem {
    let d = system.dim();
    let t = rng.random_range(-1.0..1.0);
    let h = rng.random_range(0.05..1.0);
    let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    ControlProblem::new(system, t, x, t + h, y).unwrap()
}

/// Target `e^{hB}x + D(√h)w` with `|w_i| ≤ 1`, so the cost stays of order one.
fn random_chain_problem(rng: &mut ChaCha8Rng, system: &SystemMatrix) -> ControlProblem {
    let d = system.dim();
    let t = rng.random_range(-1.0..1.0);
    let h: f64 = rng.random_range(0.1..1.0);
    let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let w = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let y = system.flow(h, &x).unwrap() + system.structure().dilate(h.sqrt(), &w).unwrap();
    ControlProblem::new(system, t, x, t + h, y).unwrap()
}

fn gramian_correctness() -> Outcome {
    let l = langevin();
    let mut closed = 0.0f64;
    let mut quad = 0.0f64;
    for t in [0.1, 0.5, 1.0] {
        let c = gramian(&l, t).unwrap();
        let exact = DMatrix::from_row_slice(2, 2, &[t, t * t / 2.0, t * t / 2.0, t.powi(3) / 3.0]);
        let entry = c.matrix().zip_map(&exact, |a, b| ((a - b) / b).abs()).max();
        closed = closed.max(entry);
        quad = quad.max(max_rel(c.matrix(), &gramian_by_quadrature(&l, t).unwrap()));
    }
    let b = sys(&[0.3, -0.5, 1.0, 0.2], &[1, 1]);
    for t in [0.1, 0.5, 1.0] {
        let c = gramian(&b, t).unwrap();
        quad = quad.max(max_rel(c.matrix(), &gramian_by_quadrature(&b, t).unwrap()));
    }
    outcome(
        closed <= 1e-10 && quad <= 1e-9,
        format!("closed-form rel err {closed:.1e} (tol 1e-10), quadrature rel err {quad:.1e} (tol 1e-9)"),
    )
}

fn scaling_law() -> Outcome {
    let structures = [
        sys(&[0.0, 0.0, 1.0, 0.0], &[1, 1]),
        sys(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0], &[2, 1]),
        sys(
            &[
                0.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, 0.0,
            ],
            &[2, 2, 1],
        ),
    ];
    let (mut law, mut oracle, mut det) = (0.0f64, 0.0f64, 0.0f64);
    for s in &structures {
        let q = homogeneous_dimension(s.structure()) as f64;
        let unit = gramian(s, 1.0).unwrap();
        for tau in [1e-3, 1e-1, 1.0] {
            let c = gramian(s, tau).unwrap();
            let dil = s.structure().dilation_matrix(tau.sqrt()).unwrap();
            let scaled = &dil * unit.matrix() * &dil;
            law = law.max(dilated_rel(s, tau, c.matrix(), &scaled));
            oracle = oracle.max(dilated_rel(s, tau, c.matrix(), &nilpotent_gramian(s, tau)));
            det = det.max((c.logdet() - q * tau.ln() - unit.logdet()).exp_m1().abs());
        }
    }
    outcome(
        law <= 1e-10 && oracle <= 1e-10 && det <= 1e-10,
        format!("scaling {law:.1e}, vs polynomial oracle {oracle:.1e}, det {det:.1e} (tol 1e-10)"),
    )
}

fn determinant_equivalence() -> Outcome {
    let b = sys(&[1.0, 0.0, 1.0, 0.0], &[1, 1]);
    let hom = b.homogeneous_part();
    let taus: Vec<f64> = (1..=10).map(|k| 2f64.powi(-k)).collect();
    let gaps: Vec<f64> = taus
        .iter()
        .map(|&tau| (gramian(&b, tau).unwrap().logdet() - gramian(&hom, tau).unwrap().logdet()).exp_m1().abs())
        .collect();
    let bounded = gaps.iter().zip(&taus).all(|(g, t)| *g <= 5.0 * t);
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    outcome(
        bounded && decreasing,
        format!(
            "max gap/τ {:.3} (tol 5), decreasing {decreasing}, gap at 2^-10 {:.1e}",
            gaps.iter().zip(&taus).map(|(g, t)| g / t).fold(0.0, f64::max),
            gaps[9]
        ),
    )
}

fn kernel_validity() -> Outcome {
    let k = GaussianKernel::new(&langevin(), 1.0).unwrap();
    let q = QuadratureSpec::default();
    let x = v(&[0.2, -0.1]);
    let hs = [1e-2, 5e-3, 2.5e-3];
    let rs: Vec<f64> = hs.iter().map(|h| pde_residual(&k, 0.0, &x, 1.0, &v(&[0.0, 0.0]), *h).unwrap()).collect();
    let order = convergence_order(&hs, &rs).unwrap();
    let ck = chapman_kolmogorov_residual(&k, 0.0, &v(&[0.0, 0.0]), 1.0, &v(&[0.3, 0.1]), 0.5, &q)
        .unwrap()
        .max(chapman_kolmogorov_residual(&k, 0.1, &x, 0.9, &v(&[-0.4, 0.2]), 0.3, &q).unwrap());
    let norm = normalization_residual(&k, 0.0, &v(&[0.3, -0.2]), 0.7, &q)
        .unwrap()
        .max(normalization_residual(&k, 0.0, &x, 1.0, &q).unwrap());
    outcome(
        (1.7..=2.3).contains(&order) && ck <= 1e-5 && norm <= 1e-7,
        format!("order {order:.3} (in [1.7, 2.3]), CK {ck:.1e} (tol 1e-5), normalization {norm:.1e} (tol 1e-7)"),
    )
}

fn optimal_control_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut hit, mut identity, mut brute) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let s = random_langevin_class(&mut rng);
        let p = random_problem(&mut rng, &s);
        let c = optimal_control(&p).unwrap();
        hit = hit.max((c.trajectory(p.big_t).unwrap() - &p.y).amax());
        let z = p.defect().unwrap();
        let direct = c.gramian().quadratic_form(&z).unwrap();
        let split = c.partial_cost(p.t, 0.5 * (p.t + p.big_t)).unwrap() + c.partial_cost(0.5 * (p.t + p.big_t), p.big_t).unwrap();
        identity = identity.max(((split - direct) / direct).abs()).max(((c.cost() - direct) / direct).abs());
        brute = brute.max((discrete_least_norm_control(&p, 1000).unwrap() / c.cost() - 1.0).abs());
    }
    outcome(
        hit <= 1e-8 && identity <= 1e-10 && brute <= 1e-3,
        format!("endpoint {hit:.1e} (tol 1e-8), cost identity {identity:.1e} (tol 1e-10), least-norm rel err {brute:.1e} (tol 1e-3)"),
    )
}

fn cone_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = default_kappa_grid(KAPPA_GRID_POINTS);
    let (mut violations, mut worst) = (0usize, 0.0f64);
    for _ in 0..100 {
        let s = random_system(&mut rng);
        let kappa = kappa_estimate(&s, &grid).unwrap();
        let p = random_problem(&mut rng, &s);
        let c = optimal_control(&p).unwrap();
        let base = SpaceTimePoint::new(p.t, p.x.clone());
        let cone = ConeSpec::new(1.0, 1.0, 1.0, base).unwrap();
        for k in 1..=64 {
            let sk = p.t + p.horizon() * k as f64 / 64.0;
            let radius = kappa * c.partial_cost(p.t, sk).unwrap().sqrt();
            let pt = SpaceTimePoint::new(sk, c.trajectory(sk).unwrap());
            let (_, xi) = cone.coordinates(&pt, &s).unwrap().expect("later time");
            worst = worst.max(xi / radius);
            if xi > radius {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations in 6400 points, max |ξ|/(κ‖v̄‖) = {worst:.4}"))
}

fn harnack_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut unverified, mut over) = (0usize, 0usize);
    for _ in 0..100 {
        let s = random_system(&mut rng);
        let beta: f64 = rng.random_range(0.2..0.8);
        let r = rng.random_range(0.2..0.45f64).min(beta.sqrt() * 0.99).min((1.0 - beta).sqrt() * 0.99);
        let cfg = HarnackConfig::new(10.0, beta, r, 1.0, kappa_estimate(&s, &default_kappa_grid(256)).unwrap()).unwrap();
        let p = random_chain_problem(&mut rng, &s);
        let chain = build_chain(&p, &cfg).unwrap();
        if !verify_chain(&chain, &cfg, &s) {
            unverified += 1;
        }
        if !chain_bound_exponent(&chain).within_bound {
            over += 1;
        }
    }
    let cfg = HarnackConfig::new(10.0, 0.5, 0.25, 1.0, 1.0).unwrap();
    let heat_chain = build_chain(&ControlProblem::new(&heat(), 0.0, v(&[0.0]), 1.0, v(&[1.0])).unwrap(), &cfg).unwrap();
    let trace = heat_chain.len() == 16 && heat_chain.exponent == 18.0;
    outcome(
        unverified == 0 && over == 0 && trace,
        format!(
            "unverified {unverified}/100, over bound {over}/100, heat trace J = {} exponent {}",
            heat_chain.len(),
            heat_chain.exponent
        ),
    )
}

fn two_sided_bound() -> Outcome {
    let cfg = BoundsConfig::new(SimConfig::new(1000, 10, 1));
    let mut details = Vec::new();
    let mut pass = true;
    for (name, s, n) in [("heat", heat(), 25), ("langevin", langevin(), 5)] {
        let x = DVector::zeros(s.dim());
        let grid = dilated_grid(&s, &x, 1.0, 3.0, n).unwrap();
        let r = verify_bounds(&sinusoid(&s), 0.0, &x, 1.0, &grid, 1.0, 4.0, &cfg).unwrap();
        let psd = r.psd_sandwich.clone().unwrap();
        let ok = grid.len() == 25
            && r.rows.iter().all(|row| row.exact)
            && (1e-3..=1e3).contains(&r.c_minus)
            && (1e-3..=1e3).contains(&r.c_plus)
            && psd.holds;
        pass &= ok;
        details.push(format!(
            "{name}: C- {:.3} C+ {:.3} PSD margins ({:.1e}, {:.1e})",
            r.c_minus, r.c_plus, psd.lower_margin, psd.upper_margin
        ));
    }
    outcome(pass, details.join("; "))
}

fn mc_consistency() -> Outcome {
    let h = heat();
    let cfg = SimConfig::new(1_000_000, 1, 2024);
    let e = simulate_paths(&principal(&h, 1.0), 0.0, &v(&[0.0]), 1.0, &cfg).unwrap();
    let est = estimate_density(&e, &v(&[0.0]), 0.1, h.structure(), 1.0).unwrap();
    let density_z = (est.value - 0.398942).abs() / est.stderr;

    let l = langevin();
    let spec = principal(&l, 1.0);
    let lcfg = SimConfig::new(1_000_000, 1, 2025).with_scheme(Scheme::ExactGaussian);
    let el = simulate_paths(&spec, 0.0, &v(&[0.0, 0.0]), 1.0, &lcfg).unwrap();
    let m = el.moments().unwrap();
    let g = gramian(&l, 1.0).unwrap();
    let cov_z = m
        .covariance
        .zip_map(g.matrix(), |a, b| a - b)
        .zip_map(&m.covariance_stderr, |gap, se| gap.abs() / se)
        .max();
    let rerun = simulate_paths(&spec, 0.0, &v(&[0.0, 0.0]), 1.0, &lcfg).unwrap();
    let identical = rerun == el;
    outcome(
        density_z <= 3.0 && cov_z <= 3.0 && identical,
        format!(
            "density {:.5} ± {:.5} ({density_z:.2} se), covariance max {cov_z:.2} se, rerun identical {identical}",
            est.value, est.stderr
        ),
    )
}

fn mass_concentration_criterion() -> Outcome {
    let h = heat();
    let x = v(&[0.0]);
    let cfg = SimConfig::new(1_000_000, 1, 77).with_scheme(Scheme::ExactGaussian);
    let e = simulate_paths(&principal(&h, 1.0), 0.0, &x, 1.0, &cfg).unwrap();
    let three = mass_concentration(&e, &h, &x, 1.0, 3.0).unwrap();
    // P(|N(0,1)| ≤ 3)
    let exact = 0.997_300_203_936_739_8;
    let z = (three.fraction - exact).abs() / three.stderr;
    let fractions: Vec<f64> = [0.5, 1.0, 1.5, 2.0, 3.0]
        .iter()
        .map(|r| mass_concentration(&e, &h, &x, 1.0, *r).unwrap().fraction)
        .collect();
    let monotone = fractions.windows(2).all(|w| w[1] > w[0]);
    outcome(
        z <= 3.0 && monotone,
        format!("fraction {:.5} ± {:.5} ({z:.2} se), monotone {monotone}", three.fraction, three.stderr),
    )
}

fn diagonal_lower_estimate() -> Outcome {
    let horizons = [0.25, 0.5, 1.0];
    let mut details = Vec::new();
    let mut pass = true;
    for (name, s) in [("heat", heat()), ("langevin", langevin())] {
        let k = GaussianKernel::from_coefficient(&s, sinusoid_field(s.m0())).unwrap();
        let pts = if s.dim() == 1 {
            dilated_grid(&s, &v(&[0.0]), 1.0, 3.0, 7).unwrap()
        } else {
            vec![DVector::zeros(2)]
        };
        let fit = diagonal_fit(&k, 0.0, &pts, &horizons).unwrap();
        pass &= fit.spread <= 2.0 && fit.c > 0.0;
        details.push(format!("{name}: c {:.4}, spread {:.3}", fit.c, fit.spread));
    }
    outcome(pass, details.join("; ") + " (tol: spread ≤ 2)")
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        run(1, "Gramian correctness", s(1), gramian_correctness),
        run(2, "scaling law", s(1), scaling_law),
        run(3, "determinant equivalence", s(1), determinant_equivalence),
        run(4, "kernel validity", s(30), kernel_validity),
        run(5, "optimal control", s(30), optimal_control_criterion),
        run(6, "cone property", s(10), cone_property),
        run(7, "Harnack chain", s(10), harnack_chain),
        run(8, "two-sided bound", s(10), two_sided_bound),
        run(9, "MC consistency", s(120), mc_consistency),
        run(10, "mass concentration", s(60), mass_concentration_criterion),
        run(11, "diagonal lower estimate", s(60), diagonal_lower_estimate),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    if failed.is_empty() {
        println!("acceptance: {} of {} criteria pass", results.len(), results.len());
    } else {
        eprintln!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
