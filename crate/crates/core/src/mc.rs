//! Monte-Carlo simulation of the diffusion associated with an operator,
//! box-kernel density estimates and empirical verification of two-sided
//! Gaussian bounds.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ellipticity_check, OperatorSpec, SampleGrid};
use crate::gramian::{gramian, gramian_weighted_matrix};
use crate::kernel::GaussianKernel;
use crate::linalg::{check_dim, matrix_exponential, symmetric_eigenvalues};
use crate::model::{BlockStructure, SystemMatrix};
use crate::quadrature::QuadratureSpec;

/// Time discretization of the SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Euler–Maruyama for the full operator (lower-order terms included).
    #[default]
    EulerMaruyama,
    /// Exact Gaussian transitions between grid times; needs a time-only
    /// diffusion and no lower-order terms.
    ExactGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        SimConfig {
            n_paths,
            n_steps,
            seed,
            scheme: Scheme::EulerMaruyama,
        }
    }

    pub fn with_scheme(self, scheme: Scheme) -> Self {
        SimConfig { scheme, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(Error::invalid(format!(
                "simulation needs at least one path and one step, got {} paths and {} steps",
                self.n_paths, self.n_steps
            )));
        }
        Ok(())
    }
}

/// Simulated endpoints, one row per path, with optional Feynman–Kac log-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoints {
    pub d: usize,
    pub n_paths: usize,
    /// Row-major `n_paths × d`.
    pub data: Vec<f64>,
    pub log_weights: Option<Vec<f64>>,
}

impl Endpoints {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    fn weight(&self, i: usize) -> f64 {
        self.log_weights.as_ref().map_or(1.0, |w| w[i].exp())
    }

    /// Sample mean and covariance with their standard errors.
    pub fn moments(&self) -> Result<Moments> {
        if self.log_weights.is_some() {
            return Err(Error::Unsupported("moments of weighted endpoints".into()));
        }
        if self.n_paths < 2 {
            return Err(Error::invalid("moments need at least two paths"));
        }
        let (n, d) = (self.n_paths as f64, self.d);
        let mut mean = DVector::<f64>::zeros(d);
        for row in self.rows() {
            for k in 0..d {
                mean[k] += row[k];
            }
        }
        mean /= n;
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut cov_sq = DMatrix::<f64>::zeros(d, d);
        for row in self.rows() {
            for i in 0..d {
                for j in 0..d {
                    let p = (row[i] - mean[i]) * (row[j] - mean[j]);
                    cov[(i, j)] += p;
                    cov_sq[(i, j)] += p * p;
                }
            }
        }
        let cov_mean = &cov / n;
        let cov_stderr = DMatrix::from_fn(d, d, |i, j| -> f64 {
            let var = (cov_sq[(i, j)] / n - cov_mean[(i, j)].powi(2)).max(0.0);
            (var / n).sqrt()
        });
        let covariance = cov / (n - 1.0);
        let mean_stderr = DVector::from_fn(d, |i, _| (covariance[(i, i)] / n).sqrt());
        Ok(Moments {
            mean,
            mean_stderr,
            covariance,
            covariance_stderr: cov_stderr,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub mean_stderr: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub covariance_stderr: DMatrix<f64>,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Per-step exact transition: `X ↦ F X + L Z`.
struct GaussianStep {
    flow: DMatrix<f64>,
    chol: DMatrix<f64>,
}

fn exact_steps(spec: &OperatorSpec, t: f64, big_t: f64, n: usize) -> Result<Vec<GaussianStep>> {
    let c = &spec.coefficients;
    if !c.a.is_time_only() || c.has_lower_order() {
        return Err(Error::Unsupported(
            "the exact Gaussian scheme needs a time-only diffusion and no lower-order terms".into(),
        ));
    }
    let sys = &spec.system;
    let dt = (big_t - t) / n as f64;
    let flow = matrix_exponential(sys.matrix(), dt)?;
    let weight = |s: f64| -> Result<DMatrix<f64>> { Ok(c.a.eval(s, &[]) * 2.0) };
    let constant = matches!(&c.a, crate::fields::DiffusionField::Scaled { scale: crate::fields::ScalarField::Constant { .. }, .. });
    let mut steps: Vec<GaussianStep> = Vec::with_capacity(n);
    for k in 0..n {
        let (s0, s1) = (t + dt * k as f64, if k + 1 == n { big_t } else { t + dt * (k + 1) as f64 });
        if constant && k > 0 {
            steps.push(GaussianStep {
                flow: flow.clone(),
                chol: steps[0].chol.clone(),
            });
            continue;
        }
        let g = gramian_weighted_matrix(sys, weight, s0, s1)?;
        steps.push(GaussianStep {
            flow: flow.clone(),
            chol: g.cholesky().clone(),
        });
    }
    Ok(steps)
}

/// Simulates `n_paths` independent paths from `(t, x)` to time `T`.
///
/// The diffusion matrix on the first `m0` coordinates is `2a(s, X)`; the
/// drift is `BX + σ(div a + a_low + b_low)`; the zero-order part
/// `c + div a_low` enters as a log-weight `∫ (c + div a_low) ds` per path.
/// Path `i` draws from the ChaCha8 stream `i` of `seed`, so results do not
/// depend on scheduling.
pub fn simulate_paths(spec: &OperatorSpec, t: f64, x: &DVector<f64>, big_t: f64, config: &SimConfig) -> Result<Endpoints> {
    config.validate()?;
    if !(big_t > t) || !t.is_finite() || !big_t.is_finite() {
        return Err(Error::invalid(format!("simulation needs T > t, got t={t}, T={big_t}")));
    }
    let sys = &spec.system;
    let d = sys.dim();
    check_dim(d, x.len())?;
    match config.scheme {
        Scheme::ExactGaussian => {
            let steps = exact_steps(spec, t, big_t, config.n_steps)?;
            let rows = (0..config.n_paths)
                .into_par_iter()
                .map(|i| {
                    let mut rng = path_rng(config.seed, i);
                    let mut state = x.clone();
                    for step in &steps {
                        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                        state = &step.flow * state + &step.chol * z;
                    }
                    state.as_slice().to_vec()
                })
                .collect::<Vec<_>>();
            Ok(Endpoints {
                d,
                n_paths: config.n_paths,
                data: rows.concat(),
                log_weights: None,
            })
        }
        Scheme::EulerMaruyama => euler_maruyama(spec, t, x, big_t, config),
    }
}

fn euler_maruyama(spec: &OperatorSpec, t: f64, x: &DVector<f64>, big_t: f64, config: &SimConfig) -> Result<Endpoints> {
    let sys = &spec.system;
    let c = &spec.coefficients;
    let (d, m0) = (sys.dim(), sys.m0());
    let n = config.n_steps;
    let dt = (big_t - t) / n as f64;
    let sqrt_dt = dt.sqrt();
    let b = sys.matrix().clone();
    let weighted = !c.c.is_zero() || !c.a_low.iter().all(|f| f.is_zero());
    let results = (0..config.n_paths)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, f64)> {
            let mut rng = path_rng(config.seed, i);
            let mut state = x.clone();
            let mut log_w = 0.0;
            let mut grad = vec![0.0; d];
            let mut div = vec![0.0; m0];
            let mut a_buf = vec![0.0; m0 * m0];
            for k in 0..n {
                let s = t + dt * k as f64;
                let xs = state.as_slice();
                c.a.eval_into(s, xs, &mut a_buf);
                let two_a = DMatrix::from_row_slice(m0, m0, &a_buf) * 2.0;
                let chol = two_a.cholesky().ok_or_else(|| {
                    Error::NotPositiveDefinite(format!("diffusion coefficient at s = {s}, x = {:?}", xs))
                })?;
                if !c.a.divergence_into(s, xs, &mut grad, &mut div) {
                    return Err(Error::Unsupported(
                        "Euler–Maruyama needs an analytic divergence for space-dependent diffusion".into(),
                    ));
                }
                let mut drift = &b * &state;
                for j in 0..m0 {
                    let mut corr = div[j];
                    if let Some(f) = c.a_low.get(j) {
                        corr += f.eval(s, xs);
                    }
                    if let Some(f) = c.b_low.get(j) {
                        corr += f.eval(s, xs);
                    }
                    drift[j] += corr;
                }
                if weighted {
                    let mut rate = c.c.eval(s, xs);
                    for (j, f) in c.a_low.iter().enumerate() {
                        if !f.gradient(s, xs, &mut grad) {
                            return Err(Error::Unsupported("lower-order coefficient a_i needs an analytic gradient".into()));
                        }
                        rate += grad[j];
                    }
                    log_w += rate * dt;
                }
                let z = DVector::from_fn(m0, |_, _| rng.sample::<f64, _>(StandardNormal));
                let kick = chol.l() * z * sqrt_dt;
                state += drift * dt;
                for j in 0..m0 {
                    state[j] += kick[j];
                }
                if state.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("simulated path"));
                }
            }
            Ok((state.as_slice().to_vec(), log_w))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(config.n_paths * d);
    let mut weights = Vec::with_capacity(config.n_paths);
    for (row, w) in results {
        data.extend_from_slice(&row);
        weights.push(w);
    }
    Ok(Endpoints {
        d,
        n_paths: config.n_paths,
        data,
        log_weights: weighted.then_some(weights),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_hits: usize,
    pub bandwidth: f64,
}

/// Box estimate of the endpoint density at `y`: the box is
/// `y + D(√horizon)[−h/2, h/2]^d`, of volume `h^d horizon^{Q/2}`.
pub fn estimate_density(
    endpoints: &Endpoints,
    y: &DVector<f64>,
    h: f64,
    structure: &BlockStructure,
    horizon: f64,
) -> Result<DensityEstimate> {
    if endpoints.n_paths == 0 {
        return Err(Error::invalid("density estimate needs at least one path"));
    }
    if !(h > 0.0 && h.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("bandwidth {h} and horizon {horizon} must be positive")));
    }
    let d = endpoints.d;
    check_dim(structure.dim(), d)?;
    check_dim(d, y.len())?;
    let inv = structure.dilation_diagonal(1.0 / horizon.sqrt())?;
    let half = 0.5 * h;
    let volume = h.powi(d as i32) * horizon.powf(0.5 * structure.homogeneous_dimension() as f64);
    let (mut hits, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
    for (i, row) in endpoints.rows().enumerate() {
        if (0..d).all(|k| (inv[k] * (row[k] - y[k])).abs() <= half) {
            hits += 1;
            let w = endpoints.weight(i);
            sum += w;
            sum_sq += w * w;
        }
    }
    let n = endpoints.n_paths as f64;
    let p = sum / n;
    let var = (sum_sq / n - p * p).max(0.0);
    Ok(DensityEstimate {
        value: p / volume,
        stderr: (var / n).sqrt() / volume,
        n_hits: hits,
        bandwidth: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassEstimate {
    pub fraction: f64,
    pub stderr: f64,
}

/// Fraction of endpoints with `|D(h^{-1/2})(X − e^{hB}x)| ≤ R`.
pub fn mass_concentration(
    endpoints: &Endpoints,
    system: &SystemMatrix,
    x: &DVector<f64>,
    horizon: f64,
    radius: f64,
) -> Result<MassEstimate> {
    if !(radius > 0.0) || !(horizon > 0.0) {
        return Err(Error::invalid(format!("radius {radius} and horizon {horizon} must be positive")));
    }
    if endpoints.n_paths == 0 {
        return Err(Error::invalid("mass estimate needs at least one path"));
    }
    check_dim(system.dim(), endpoints.d)?;
    let center = system.flow(horizon, x)?;
    let inv = system.structure().dilation_diagonal(1.0 / horizon.sqrt())?;
    let r2 = radius * radius;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (i, row) in endpoints.rows().enumerate() {
        let dist: f64 = (0..endpoints.d).map(|k| (inv[k] * (row[k] - center[k])).powi(2)).sum();
        if dist <= r2 {
            let w = endpoints.weight(i);
            sum += w;
            sum_sq += w * w;
        }
    }
    let n = endpoints.n_paths as f64;
    let p = sum / n;
    Ok(MassEstimate {
        fraction: p,
        stderr: ((sum_sq / n - p * p).max(0.0) / n).sqrt(),
    })
}

/// `∫ Γ(t, ξ; T, y) dξ` over `|D(h^{-1/2})(y − e^{hB}ξ)| ≤ R`, by quadrature in
/// polar coordinates of the dilated offset (`d ≤ 2`).
pub fn mass_concentration_dual(kernel: &GaussianKernel, t: f64, big_t: f64, y: &DVector<f64>, radius: f64, spec: &QuadratureSpec) -> Result<f64> {
    let sys = kernel.system();
    let d = sys.dim();
    if d > 2 {
        return Err(Error::Unsupported(format!("dual mass quadrature is limited to d <= 2, got d = {d}")));
    }
    check_dim(d, y.len())?;
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    let h = big_t - t;
    let slice = kernel.slice(t, big_t)?;
    let back = matrix_exponential(sys.matrix(), -h)?;
    let dil = sys.structure().dilation_diagonal(h.sqrt())?;
    // ξ = e^{−hB}(y − D(√h) w): |dξ| = |det e^{−hB}| h^{Q/2} dw
    let log_jac = -sys.matrix().trace() * h + 0.5 * sys.structure().homogeneous_dimension() as f64 * h.ln();
    let density = |w: &DVector<f64>| -> Result<f64> {
        let xi = &back * (y - dil.component_mul(w));
        Ok((slice.log_density(&xi, y)? + log_jac).exp())
    };
    let (gx, gw) = crate::quadrature::gauss_legendre(spec.nodes);
    let rule = |a: f64, b: f64| -> Vec<(f64, f64)> {
        let width = (b - a) / spec.panels as f64;
        (0..spec.panels)
            .flat_map(|p| {
                let lo = a + width * p as f64;
                gx.iter().zip(&gw).map(move |(x, w)| (lo + 0.5 * width * (x + 1.0), 0.5 * width * w))
            })
            .collect()
    };
    let mut total = 0.0;
    if d == 1 {
        for (w, wt) in rule(-radius, radius) {
            total += wt * density(&DVector::from_element(1, w))?;
        }
    } else {
        let angles = rule(0.0, 2.0 * std::f64::consts::PI);
        for (r, wr) in rule(0.0, radius) {
            for &(a, wa) in &angles {
                total += wr * wa * r * density(&DVector::from_vec(vec![r * a.cos(), r * a.sin()]))?;
            }
        }
    }
    Ok(total)
}

/// Grid `e^{hB}x + D(√h) w` with `w` on a tensor grid of `n` points per axis
/// spanning `[−R/√d, R/√d]`, so every offset has dilated norm at most `R`.
pub fn dilated_grid(system: &SystemMatrix, x: &DVector<f64>, horizon: f64, radius: f64, n: usize) -> Result<Vec<DVector<f64>>> {
    let d = system.dim();
    check_dim(d, x.len())?;
    if n == 0 || !(radius > 0.0) || !(horizon > 0.0) {
        return Err(Error::invalid("grid needs points, a positive radius and a positive horizon"));
    }
    let center = system.flow(horizon, x)?;
    let dil = system.structure().dilation_diagonal(horizon.sqrt())?;
    let extent = radius / (d as f64).sqrt();
    let axis: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|k| -extent + 2.0 * extent * k as f64 / (n - 1) as f64).collect()
    };
    let total = n.checked_pow(d as u32).ok_or_else(|| Error::invalid("grid too large"))?;
    Ok((0..total)
        .map(|mut idx| {
            let w = DVector::from_fn(d, |_, _| {
                let v = axis[idx % n];
                idx /= n;
                v
            });
            &center + dil.component_mul(&w)
        })
        .collect())
}

/// Options of [`verify_bounds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub sim: SimConfig,
    /// Box width for Monte-Carlo density estimates.
    pub bandwidth: f64,
    /// Horizons of the diagonal lower estimate.
    pub diagonal_horizons: Vec<f64>,
    /// Points of the diagonal estimate; the y grid when absent.
    #[serde(default)]
    pub diagonal_points: Option<Vec<Vec<f64>>>,
}

impl BoundsConfig {
    pub fn new(sim: SimConfig) -> Self {
        BoundsConfig {
            sim,
            bandwidth: 0.1,
            diagonal_horizons: vec![0.25, 0.5, 1.0],
            diagonal_points: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub y: Vec<f64>,
    pub gamma: f64,
    pub stderr: f64,
    pub exact: bool,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    pub ratio_minus: f64,
    pub ratio_plus: f64,
    /// Monte-Carlo estimate with no paths in the box.
    pub zero_hits: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdSandwich {
    /// Smallest eigenvalue of `D(h^{-1/2})(C_a − λ⁻C)D(h^{-1/2})`.
    pub lower_margin: f64,
    /// Smallest eigenvalue of `D(h^{-1/2})(λ⁺C − C_a)D(h^{-1/2})`.
    pub upper_margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagonalFit {
    pub horizons: Vec<f64>,
    /// `min_y Γ(t, y; t+h, y) h^{Q/2}` per horizon.
    pub constants: Vec<f64>,
    pub c: f64,
    /// `max / min` of the per-horizon constants.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub rows: Vec<BoundRow>,
    /// `min (Γ − 3 se) / Γ^{λ⁻}`.
    pub c_minus: f64,
    /// `max (Γ + 3 se) / Γ^{λ⁺}`.
    pub c_plus: f64,
    pub psd_sandwich: Option<PsdSandwich>,
    pub diagonal: Option<DiagonalFit>,
    pub a_min: f64,
    pub a_max: f64,
    pub seed: u64,
}

pub const PSD_TOLERANCE: f64 = 1e-10;

/// Compares the fundamental solution of `spec` from `(t, x)` to time `T` with
/// `Γ^{λ⁻}` and `Γ^{λ⁺}` on `y_grid`.
///
/// The solution is the exact weighted-Gramian kernel when the diffusion
/// depends on time only and there are no lower-order terms, and a Monte-Carlo
/// box estimate otherwise. The comparison range must cover the sampled
/// diffusion: `λ⁻ ≤ 2 min a` and `λ⁺ ≥ 2 max a`.
#[allow(clippy::too_many_arguments)]
pub fn verify_bounds(
    spec: &OperatorSpec,
    t: f64,
    x: &DVector<f64>,
    big_t: f64,
    y_grid: &[DVector<f64>],
    lambda_minus: f64,
    lambda_plus: f64,
    config: &BoundsConfig,
) -> Result<BoundReport> {
    let sys = &spec.system;
    check_dim(sys.dim(), x.len())?;
    if y_grid.is_empty() {
        return Err(Error::invalid("bound verification needs grid points"));
    }
    if !(lambda_minus > 0.0 && lambda_minus <= lambda_plus && lambda_plus.is_finite()) {
        return Err(Error::Coefficient {
            clause: "lambda-range",
            message: format!("need 0 < λ⁻ ≤ λ⁺, got ({lambda_minus}, {lambda_plus})"),
        });
    }
    let report = ellipticity_check(spec, &SampleGrid::default_for(sys))?;
    let slack = 1e-12;
    if lambda_minus > 2.0 * report.a_min * (1.0 + slack) || lambda_plus < 2.0 * report.a_max * (1.0 - slack) {
        return Err(Error::Coefficient {
            clause: "lambda-range",
            message: format!(
                "[λ⁻, λ⁺] = [{lambda_minus}, {lambda_plus}] does not cover the sampled diffusion range [{}, {}]",
                2.0 * report.a_min,
                2.0 * report.a_max
            ),
        });
    }
    let k_minus = GaussianKernel::new(sys, lambda_minus)?;
    let k_plus = GaussianKernel::new(sys, lambda_plus)?;
    let c = &spec.coefficients;
    let exact = c.a.is_time_only() && !c.has_lower_order();
    let h = big_t - t;

    let mut rows = Vec::with_capacity(y_grid.len());
    let (mut c_minus, mut c_plus) = (f64::INFINITY, 0.0f64);
    let mut psd = None;
    let mut diagonal = None;
    if exact {
        let kernel = GaussianKernel::from_coefficient(sys, c.a.clone())?;
        for y in y_grid {
            let lg = kernel.log_density(t, x, big_t, y)?;
            let lm = k_minus.log_density(t, x, big_t, y)?;
            let lp = k_plus.log_density(t, x, big_t, y)?;
            let (rm, rp) = ((lg - lm).exp(), (lg - lp).exp());
            c_minus = c_minus.min(rm);
            c_plus = c_plus.max(rp);
            rows.push(BoundRow {
                y: y.as_slice().to_vec(),
                gamma: lg.exp(),
                stderr: 0.0,
                exact: true,
                gamma_minus: lm.exp(),
                gamma_plus: lp.exp(),
                ratio_minus: rm,
                ratio_plus: rp,
                zero_hits: false,
            });
        }
        let ca = kernel.covariance(t, big_t)?;
        let c0 = gramian(sys, h)?;
        let unit = c0.unit_matrix();
        let lower_margin = symmetric_eigenvalues(&(ca.unit_matrix() - unit * lambda_minus))[0];
        let upper_margin = symmetric_eigenvalues(&(unit * lambda_plus - ca.unit_matrix()))[0];
        psd = Some(PsdSandwich {
            lower_margin,
            upper_margin,
            holds: lower_margin >= -PSD_TOLERANCE && upper_margin >= -PSD_TOLERANCE,
        });
        let points: Vec<DVector<f64>> = match &config.diagonal_points {
            Some(p) => p.iter().map(|v| DVector::from_column_slice(v)).collect(),
            None => y_grid.to_vec(),
        };
        diagonal = Some(diagonal_fit(&kernel, t, &points, &config.diagonal_horizons)?);
    } else {
        let endpoints = simulate_paths(spec, t, x, big_t, &config.sim)?;
        for y in y_grid {
            let est = estimate_density(&endpoints, y, config.bandwidth, sys.structure(), h)?;
            let gm = k_minus.density(t, x, big_t, y)?;
            let gp = k_plus.density(t, x, big_t, y)?;
            c_minus = c_minus.min((est.value - 3.0 * est.stderr) / gm);
            c_plus = c_plus.max((est.value + 3.0 * est.stderr) / gp);
            rows.push(BoundRow {
                y: y.as_slice().to_vec(),
                gamma: est.value,
                stderr: est.stderr,
                exact: false,
                gamma_minus: gm,
                gamma_plus: gp,
                ratio_minus: est.value / gm,
                ratio_plus: est.value / gp,
                zero_hits: est.n_hits == 0,
            });
        }
    }
    Ok(BoundReport {
        lambda_minus,
        lambda_plus,
        rows,
        c_minus,
        c_plus,
        psd_sandwich: psd,
        diagonal,
        a_min: report.a_min,
        a_max: report.a_max,
        seed: config.sim.seed,
    })
}

/// `c_h = min_y Γ(t, y; t+h, y) h^{Q/2}` for each horizon.
pub fn diagonal_fit(kernel: &GaussianKernel, t: f64, points: &[DVector<f64>], horizons: &[f64]) -> Result<DiagonalFit> {
    if points.is_empty() || horizons.is_empty() {
        return Err(Error::invalid("diagonal fit needs points and horizons"));
    }
    let q = kernel.system().structure().homogeneous_dimension() as f64;
    let mut constants = Vec::with_capacity(horizons.len());
    for &h in horizons {
        if !(h > 0.0) {
            return Err(Error::invalid(format!("diagonal horizon must be positive, got {h}")));
        }
        let mut best = f64::INFINITY;
        for y in points {
            best = best.min((kernel.log_density(t, y, t + h, y)? + 0.5 * q * h.ln()).exp());
        }
        constants.push(best);
    }
    let lo = constants.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = constants.iter().cloned().fold(0.0, f64::max);
    Ok(DiagonalFit {
        horizons: horizons.to_vec(),
        constants,
        c: lo,
        spread: hi / lo,
    })
}
