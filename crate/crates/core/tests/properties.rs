use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use kolmogorov::chain::{build_chain, verify_chain, HarnackConfig, COST_TOLERANCE};
use kolmogorov::control::{optimal_control, ConeSpec, ControlProblem};
use kolmogorov::kernel::GaussianKernel;
use kolmogorov::mc::{simulate_paths, SimConfig};
use kolmogorov::model::dilate_point;
use kolmogorov::{
    gramian, group_compose, group_inverse, homogeneous_dimension, scaled_system, validate_structure, Coefficients,
    OperatorSpec, SpaceTimePoint, SystemMatrix,
};

/// A drift with block structure `[1, 1]` or `[2, 1]`, built from nine numbers
/// in `[-1, 1]`; the subdiagonal block is kept away from zero.
fn system_from(params: &[f64], wide: bool) -> SystemMatrix {
    let lift = |v: f64| v.signum() * (0.5 + v.abs());
    if wide {
        let mut rows = [0.0; 9];
        for (k, (i, j)) in [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)].into_iter().enumerate() {
            rows[3 * i + j] = 0.5 * params[k];
        }
        rows[6] = lift(params[5]);
        rows[7] = params[6];
        validate_structure(DMatrix::from_row_slice(3, 3, &rows), &[2, 1]).unwrap()
    } else {
        let rows = [params[0], 0.0, lift(params[1]), params[2]];
        validate_structure(DMatrix::from_row_slice(2, 2, &rows), &[1, 1]).unwrap()
    }
}

fn arb_system() -> impl Strategy<Value = SystemMatrix> {
    (prop::collection::vec(-1.0..1.0f64, 9), any::<bool>()).prop_map(|(p, wide)| system_from(&p, wide))
}

fn arb_homogeneous() -> impl Strategy<Value = SystemMatrix> {
    arb_system().prop_map(|s| s.homogeneous_part())
}

fn point(t: f64, coords: &[f64], d: usize) -> SpaceTimePoint {
    SpaceTimePoint::from_slice(t, &coords[..d])
}

fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + a.amax().max(b.amax()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_law_is_associative_with_inverses(
        s in arb_system(),
        times in prop::collection::vec(-1.0..1.0f64, 3),
        coords in prop::collection::vec(-2.0..2.0f64, 9),
    ) {
        let d = s.dim();
        let a = point(times[0], &coords[0..3], d);
        let b = point(times[1], &coords[3..6], d);
        let c = point(times[2], &coords[6..9], d);
        let left = group_compose(&group_compose(&a, &b, &s).unwrap(), &c, &s).unwrap();
        let right = group_compose(&a, &group_compose(&b, &c, &s).unwrap(), &s).unwrap();
        prop_assert!((left.t - right.t).abs() < 1e-12);
        prop_assert!(close(&left.x, &right.x, 1e-11));
        let inv = group_inverse(&a, &s).unwrap();
        for e in [group_compose(&a, &inv, &s).unwrap(), group_compose(&inv, &a, &s).unwrap()] {
            prop_assert!(e.t.abs() < 1e-12);
            prop_assert!(e.x.amax() < 1e-11 * (1.0 + a.x.amax()));
        }
    }

    #[test]
    fn dilations_multiply_and_scale_volume(s in arb_system(), r in 0.1..3.0f64, q in 0.1..3.0f64) {
        let st = s.structure();
        let prod = st.dilation_matrix(r).unwrap() * st.dilation_matrix(q).unwrap();
        prop_assert!((prod - st.dilation_matrix(r * q).unwrap()).amax() < 1e-12 * (r * q).powi(5).max(1.0));
        let det = st.dilation_matrix(r).unwrap().determinant();
        let expected = r.powi(homogeneous_dimension(st) as i32);
        prop_assert!((det / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_system_round_trip(s in arb_system(), r in 0.1..4.0f64) {
        let back = scaled_system(&scaled_system(&s, r).unwrap(), 1.0 / r).unwrap();
        prop_assert!((back.matrix() - s.matrix()).amax() < 1e-12);
        prop_assert_eq!(back.structure(), s.structure());
    }

    #[test]
    fn gramian_grows_with_the_horizon(s in arb_system(), t in 0.05..1.0f64, extra in 0.01..1.0f64) {
        let small = gramian(&s, t).unwrap();
        let large = gramian(&s, t + extra).unwrap();
        let gap = large.matrix() - small.matrix();
        let min_eig = gap.symmetric_eigenvalues().min();
        prop_assert!(min_eig > -1e-12 * large.matrix().amax());
    }

    #[test]
    fn kernel_is_translation_invariant(
        s in arb_system(),
        lambda in 0.5..2.0f64,
        h in 0.1..1.0f64,
        zeta_t in -1.0..1.0f64,
        coords in prop::collection::vec(-1.0..1.0f64, 9),
    ) {
        let d = s.dim();
        let k = GaussianKernel::new(&s, lambda).unwrap();
        let z = point(0.2, &coords[0..3], d);
        let w = point(0.2 + h, &coords[3..6], d);
        let zeta = point(zeta_t, &coords[6..9], d);
        let tz = group_compose(&zeta, &z, &s).unwrap();
        let tw = group_compose(&zeta, &w, &s).unwrap();
        let a = k.log_density(z.t, &z.x, w.t, &w.x).unwrap();
        let b = k.log_density(tz.t, &tz.x, tw.t, &tw.x).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn homogeneous_kernel_scales_with_dilations(
        s in arb_homogeneous(),
        r in 0.3..3.0f64,
        h in 0.1..1.0f64,
        coords in prop::collection::vec(-1.0..1.0f64, 6),
    ) {
        let d = s.dim();
        let k = GaussianKernel::new(&s, 1.0).unwrap();
        let z = point(0.1, &coords[0..3], d);
        let w = point(0.1 + h, &coords[3..6], d);
        let dz = dilate_point(s.structure(), r, &z).unwrap();
        let dw = dilate_point(s.structure(), r, &w).unwrap();
        let q = homogeneous_dimension(s.structure()) as f64;
        let a = k.log_density(z.t, &z.x, w.t, &w.x).unwrap() - q * r.ln();
        let b = k.log_density(dz.t, &dz.x, dw.t, &dw.x).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn cone_coordinates_are_translation_invariant(
        s in arb_system(),
        dt in 0.01..1.0f64,
        zeta_t in -1.0..1.0f64,
        coords in prop::collection::vec(-1.0..1.0f64, 9),
    ) {
        let d = s.dim();
        let base = point(0.0, &coords[0..3], d);
        let p = point(dt, &coords[3..6], d);
        let zeta = point(zeta_t, &coords[6..9], d);
        let cone = ConeSpec::new(0.5, 0.25, 1.0, base.clone()).unwrap();
        let moved = ConeSpec::new(0.5, 0.25, 1.0, group_compose(&zeta, &base, &s).unwrap()).unwrap();
        let (l1, x1) = cone.coordinates(&p, &s).unwrap().unwrap();
        let (l2, x2) = moved.coordinates(&group_compose(&zeta, &p, &s).unwrap(), &s).unwrap().unwrap();
        prop_assert!((l1 - l2).abs() < 1e-12);
        prop_assert!((x1 - x2).abs() < 1e-8 * (1.0 + x1));
    }

    #[test]
    fn partial_costs_add_up(
        s in arb_system(),
        h in 0.1..1.0f64,
        cut in 0.0..1.0f64,
        coords in prop::collection::vec(-1.0..1.0f64, 6),
    ) {
        let d = s.dim();
        let p = ControlProblem::new(&s, 0.0, DVector::from_column_slice(&coords[0..d]), h, DVector::from_column_slice(&coords[3..3 + d])).unwrap();
        let c = optimal_control(&p).unwrap();
        let mid = cut * h;
        let split = c.partial_cost(0.0, mid).unwrap() + c.partial_cost(mid, h).unwrap();
        prop_assert!((split - c.cost()).abs() <= 1e-9 * (1.0 + c.cost()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn chains_verify_and_spend_the_cost(
        s in arb_system(),
        beta in 0.3..0.7f64,
        h in 0.2..1.0f64,
        coords in prop::collection::vec(-0.7..0.7f64, 6),
    ) {
        let d = s.dim();
        let cfg = HarnackConfig::new(10.0, beta, 0.3, 1.0, 1.5).unwrap();
        let x = DVector::from_column_slice(&coords[0..d]);
        let y = s.flow(h, &x).unwrap() + s.structure().dilate(h.sqrt(), &DVector::from_column_slice(&coords[3..3 + d])).unwrap();
        let chain = build_chain(&ControlProblem::new(&s, 0.0, x, h, y).unwrap(), &cfg).unwrap();
        prop_assert!(verify_chain(&chain, &cfg, &s));
        prop_assert!(chain.times.windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(*chain.times.last().unwrap(), h);
        prop_assert!(chain.steps.iter().all(|st| st.cost <= cfg.epsilon + COST_TOLERANCE));
        let total: f64 = chain.steps.iter().map(|st| st.cost).sum();
        prop_assert!((total - chain.cost).abs() <= 1e-9 * (1.0 + chain.cost));
        prop_assert!(chain.len() as f64 <= chain.exponent.ceil() + 1.0);
    }

    #[test]
    fn simulation_is_reproducible(s in arb_system(), seed in any::<u64>()) {
        let spec = OperatorSpec::new(s.clone(), Coefficients::principal(s.m0(), 1.0), 2.0, 0.0).unwrap();
        let x = DVector::zeros(s.dim());
        let cfg = SimConfig::new(64, 8, seed);
        let a = simulate_paths(&spec, 0.0, &x, 0.5, &cfg).unwrap();
        let b = simulate_paths(&spec, 0.0, &x, 0.5, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}
