//! Minimum-energy controls for `γ' = Bγ + σv`, the cone constant κ and the
//! cone / cylinder predicates built on the group law and dilations.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::unit_directions;
use crate::gramian::{gramian, gramian_matrix, Gramian};
use crate::linalg::{check_dim, matrix_exponential, numerical_rank, symmetric_eigenvalues};
use crate::model::{SpaceTimePoint, SystemMatrix};
use crate::quadrature::{adaptive_simpson, SimpsonTolerance};

/// Steer `x` at time `t` to `y` at time `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    pub system: SystemMatrix,
    pub t: f64,
    pub big_t: f64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl ControlProblem {
    pub fn new(system: &SystemMatrix, t: f64, x: DVector<f64>, big_t: f64, y: DVector<f64>) -> Result<Self> {
        if !(big_t > t) || !t.is_finite() || !big_t.is_finite() {
            return Err(Error::invalid(format!("control problem needs T > t, got t={t}, T={big_t}")));
        }
        check_dim(system.dim(), x.len())?;
        check_dim(system.dim(), y.len())?;
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control endpoints"));
        }
        Ok(ControlProblem {
            system: system.clone(),
            t,
            big_t,
            x,
            y,
        })
    }

    pub fn between(system: &SystemMatrix, from: &SpaceTimePoint, to: &SpaceTimePoint) -> Result<Self> {
        Self::new(system, from.t, from.x.clone(), to.t, to.x.clone())
    }

    pub fn horizon(&self) -> f64 {
        self.big_t - self.t
    }

    /// `y − e^{(T−t)B} x`.
    pub fn defect(&self) -> Result<DVector<f64>> {
        Ok(&self.y - self.system.flow(self.horizon(), &self.x)?)
    }
}

/// `v̄(s) = σᵀ e^{(T−s)Bᵀ} w` with `C(T−t) w = y − e^{(T−t)B}x`.
#[derive(Debug, Clone)]
pub struct OptimalControl {
    problem: ControlProblem,
    gramian: Gramian,
    w: DVector<f64>,
    cost: f64,
}

impl OptimalControl {
    pub fn problem(&self) -> &ControlProblem {
        &self.problem
    }

    /// `C(T−t)`.
    pub fn gramian(&self) -> &Gramian {
        &self.gramian
    }

    pub fn coefficient(&self) -> &DVector<f64> {
        &self.w
    }

    /// `V = ‖v̄‖²_{L²(t,T)}`.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn l2_norm(&self) -> f64 {
        self.cost.sqrt()
    }

    fn check_time(&self, s: f64) -> Result<()> {
        let p = &self.problem;
        if !(s >= p.t && s <= p.big_t) {
            return Err(Error::invalid(format!("time {s} outside [{}, {}]", p.t, p.big_t)));
        }
        Ok(())
    }

    /// `v̄(s)`, an `m0`-vector.
    pub fn control(&self, s: f64) -> Result<DVector<f64>> {
        self.check_time(s)?;
        let p = &self.problem;
        let m0 = p.system.m0();
        let e = matrix_exponential(p.system.matrix(), p.big_t - s)?;
        let full = e.transpose() * &self.w;
        Ok(full.rows(0, m0).into_owned())
    }

    /// `γ(s) = e^{(s−t)B}x + C(s−t) e^{(T−s)Bᵀ} w`.
    pub fn trajectory(&self, s: f64) -> Result<DVector<f64>> {
        self.check_time(s)?;
        let p = &self.problem;
        let free = p.system.flow(s - p.t, &p.x)?;
        if s == p.t {
            return Ok(free);
        }
        let steer = matrix_exponential(p.system.matrix(), p.big_t - s)?.transpose() * &self.w;
        Ok(free + gramian_matrix(&p.system, s - p.t)? * steer)
    }

    /// `∫_a^b |v̄|² = wᵀ[C(T−a) − C(T−b)]w` for `t ≤ a ≤ b ≤ T`, evaluated
    /// without cancellation as `qᵀ C(b−a) q` with `q = e^{(T−b)Bᵀ}w`.
    pub fn partial_cost(&self, a: f64, b: f64) -> Result<f64> {
        self.check_time(a)?;
        self.check_time(b)?;
        if a > b {
            return Err(Error::invalid(format!("partial cost needs a ≤ b, got [{a}, {b}]")));
        }
        if a == b {
            return Ok(0.0);
        }
        let p = &self.problem;
        let q = matrix_exponential(p.system.matrix(), p.big_t - b)?.transpose() * &self.w;
        Ok(q.dot(&(gramian_matrix(&p.system, b - a)? * &q)))
    }

    /// `∫_t^s e^{(s−τ)B} σ v̄(τ) dτ + e^{(s−t)B}x` by adaptive quadrature,
    /// independent of the closed form.
    pub fn trajectory_by_quadrature(&self, s: f64) -> Result<DVector<f64>> {
        self.check_time(s)?;
        let p = &self.problem;
        let sigma = p.system.sigma();
        let integral = adaptive_simpson(
            |tau| {
                let v = matrix_exponential(p.system.matrix(), s - tau)? * &sigma * self.control(tau)?;
                Ok(DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
            },
            p.t,
            s,
            SimpsonTolerance::default(),
        )?;
        Ok(p.system.flow(s - p.t, &p.x)? + integral.column(0))
    }
}

pub fn optimal_control(problem: &ControlProblem) -> Result<OptimalControl> {
    let g = gramian(&problem.system, problem.horizon())?;
    let z = problem.defect()?;
    let w = g.solve(&z)?;
    let cost = g.quadratic_form(&z)?;
    Ok(OptimalControl {
        problem: problem.clone(),
        gramian: g,
        w,
        cost,
    })
}

pub fn optimal_cost(problem: &ControlProblem) -> Result<f64> {
    gramian(&problem.system, problem.horizon())?.quadratic_form(&problem.defect()?)
}

pub fn trajectory(ctrl: &OptimalControl, s: f64) -> Result<DVector<f64>> {
    ctrl.trajectory(s)
}

/// Cost of the minimum-norm piecewise-constant control on `n_steps` equal
/// steps, with exact propagation between steps.
pub fn discrete_least_norm_control(problem: &ControlProblem, n_steps: usize) -> Result<f64> {
    if n_steps < 2 {
        return Err(Error::invalid(format!("discrete control needs at least 2 steps, got {n_steps}")));
    }
    let sys = &problem.system;
    let (d, m0) = (sys.dim(), sys.m0());
    let dt = problem.horizon() / n_steps as f64;
    // exp(dt [[B, σ], [0, 0]]) = [[e^{dtB}, ∫_0^dt e^{sB}σ ds], [0, I]]
    let mut aug = DMatrix::zeros(d + m0, d + m0);
    aug.view_mut((0, 0), (d, d)).copy_from(sys.matrix());
    aug.view_mut((0, d), (d, m0)).copy_from(&sys.sigma());
    let e = matrix_exponential(&aug, dt)?;
    let step = e.view((0, 0), (d, d)).into_owned();
    let input = e.view((0, d), (d, m0)).into_owned();
    // columns for u_k carry A^{n-1-k} G
    let mut reach = DMatrix::zeros(d, n_steps * m0);
    let mut block = input;
    for k in (0..n_steps).rev() {
        reach.view_mut((0, k * m0), (d, m0)).copy_from(&block);
        block = &step * block;
    }
    if numerical_rank(&reach) < d {
        return Err(Error::SingularGramian {
            horizon: problem.horizon(),
        });
    }
    let target = problem.defect()?;
    let svd = reach.svd(true, true);
    let u = svd
        .solve(&target, 0.0)
        .map_err(|e| Error::NotPositiveDefinite(format!("reachability least squares: {e}")))?;
    Ok(dt * u.norm_squared())
}

/// Points `k/n`, `k = 1..n`.
pub fn default_kappa_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / n as f64).collect()
}

pub const KAPPA_GRID_POINTS: usize = 1024;
pub const KAPPA_DIRECTIONS: usize = 64;
pub const KAPPA_SAFETY: f64 = 1.1;

/// Breakdown of [`kappa_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaReport {
    /// Sampled sup of `|(e^{sB}σv)^{(j)}| / (s^j |v|)`.
    pub blockwise: f64,
    /// Sampled sup of `√λmax(D(s^{-1/2}) C(s) D(s^{-1/2}))`, the constant
    /// that bounds `|D(s^{-1/2})∫_0^s e^{(s−τ)B}σv dτ|` by `‖v‖_{L²}`.
    pub operator: f64,
    pub kappa: f64,
}

pub fn kappa_report(system: &SystemMatrix, s_grid: &[f64]) -> Result<KappaReport> {
    if s_grid.is_empty() {
        return Err(Error::invalid("κ needs a non-empty s grid"));
    }
    if let Some(s) = s_grid.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(Error::invalid(format!("κ grid points must lie in (0, 1], got {s}")));
    }
    let structure = system.structure();
    let sigma = system.sigma();
    let dirs = unit_directions(system.m0(), KAPPA_DIRECTIONS);
    let (mut blockwise, mut operator) = (0.0f64, 0.0f64);
    for &s in s_grid {
        let es = matrix_exponential(system.matrix(), s)? * &sigma;
        for v in &dirs {
            let image = &es * v;
            for j in 0..=structure.nu() {
                let range = structure.block_range(j);
                let part = image.rows(range.start, range.len()).norm();
                blockwise = blockwise.max(part / s.powi(j as i32));
            }
        }
        let unit = gramian(system, s)?;
        let top = *symmetric_eigenvalues(unit.unit_matrix()).last().expect("non-empty");
        operator = operator.max(top.sqrt());
    }
    Ok(KappaReport {
        blockwise,
        operator,
        kappa: KAPPA_SAFETY * blockwise.max(operator),
    })
}

/// Cone constant κ with the 1.1 safety factor.
pub fn kappa_estimate(system: &SystemMatrix, s_grid: &[f64]) -> Result<f64> {
    Ok(kappa_report(system, s_grid)?.kappa)
}

/// `P_{β,r,R}(z₀) = { z₀ ∘ δ_λ(β, ξ) : |ξ| < r, 0 < λ ≤ R }`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSpec {
    pub beta: f64,
    pub r: f64,
    pub big_r: f64,
    pub base: SpaceTimePoint,
}

impl ConeSpec {
    /// `β` may equal 1, which gives the full cone used for control trajectories.
    pub fn new(beta: f64, r: f64, big_r: f64, base: SpaceTimePoint) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) || !(r > 0.0 && r.is_finite()) || !(big_r > 0.0 && big_r.is_finite()) {
            return Err(Error::invalid(format!("cone needs 0 < β ≤ 1 and r, R > 0, got β={beta}, r={r}, R={big_r}")));
        }
        Ok(ConeSpec { beta, r, big_r, base })
    }

    /// `(λ, |ξ|)` for `p = z₀ ∘ δ_λ(β, ξ)`, or `None` when `p` is not later than the base.
    pub fn coordinates(&self, p: &SpaceTimePoint, system: &SystemMatrix) -> Result<Option<(f64, f64)>> {
        let dt = p.t - self.base.t;
        if !(dt > 0.0) {
            return Ok(None);
        }
        let lambda = (dt / self.beta).sqrt();
        let z = &p.x - system.flow(dt, &self.base.x)?;
        let xi = system.structure().dilate(1.0 / lambda, &z)?.norm();
        Ok(Some((lambda, xi)))
    }

    /// Membership with `slack` added to `R` (absolute) to absorb rounding in
    /// constructed points.
    pub fn contains_with_slack(&self, p: &SpaceTimePoint, system: &SystemMatrix, slack: f64) -> Result<bool> {
        Ok(match self.coordinates(p, system)? {
            Some((lambda, xi)) => lambda <= self.big_r + slack && xi < self.r,
            None => false,
        })
    }

    pub fn contains(&self, p: &SpaceTimePoint, system: &SystemMatrix) -> Result<bool> {
        self.contains_with_slack(p, system, 0.0)
    }
}

pub fn cone_membership(cone: &ConeSpec, p: &SpaceTimePoint, system: &SystemMatrix) -> Result<bool> {
    cone.contains(p, system)
}

/// `δ_{1/ρ}(z₀⁻¹ ∘ p) ∈ {0 ≤ t < 1, |x| < 1}`.
pub fn cylinder_membership(center: &SpaceTimePoint, rho: f64, p: &SpaceTimePoint, system: &SystemMatrix) -> Result<bool> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("cylinder radius must be positive, got {rho}")));
    }
    let dt = p.t - center.t;
    let tau = dt / (rho * rho);
    if !(0.0..1.0).contains(&tau) {
        return Ok(false);
    }
    let z = &p.x - system.flow(dt, &center.x)?;
    Ok(system.structure().dilate(1.0 / rho, &z)?.norm() < 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_structure;
    use approx::assert_relative_eq;

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

    #[test]
    fn heat_control_is_constant() {
        let p = ControlProblem::new(&heat(), 0.0, v(&[0.0]), 1.0, v(&[1.0])).unwrap();
        let c = optimal_control(&p).unwrap();
        assert_relative_eq!(c.cost(), 1.0, epsilon = 1e-14);
        for s in [0.0, 0.3, 1.0] {
            assert_relative_eq!(c.control(s).unwrap()[0], 1.0, epsilon = 1e-14);
        }
        assert_relative_eq!(c.trajectory(0.5).unwrap()[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(discrete_least_norm_control(&p, 2).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(discrete_least_norm_control(&p, 37).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn langevin_costs() {
        let l = langevin();
        let o = v(&[0.0, 0.0]);
        let p = ControlProblem::new(&l, 0.0, o.clone(), 1.0, v(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(optimal_cost(&p).unwrap(), 4.0, max_relative = 1e-12);
        let disc = discrete_least_norm_control(&p, 1000).unwrap();
        assert!((disc / 4.0 - 1.0).abs() < 1e-3);
        let p = ControlProblem::new(&l, 0.0, o, 1.0, v(&[0.0, 1.0])).unwrap();
        assert_relative_eq!(optimal_cost(&p).unwrap(), 12.0, max_relative = 1e-12);
    }

    #[test]
    fn target_on_the_flow_costs_nothing() {
        let l = langevin();
        let x = v(&[0.5, -0.2]);
        let y = l.flow(0.8, &x).unwrap();
        let p = ControlProblem::new(&l, 0.1, x, 0.9, y).unwrap();
        let c = optimal_control(&p).unwrap();
        assert!(c.cost().abs() < 1e-20);
        assert!(c.control(0.5).unwrap().norm() < 1e-10);
        assert!(discrete_least_norm_control(&p, 10).unwrap() < 1e-20);
    }

    #[test]
    fn trajectory_hits_target_and_matches_quadrature() {
        let b = sys(&[0.3, -0.5, 1.0, 0.2], &[1, 1]);
        let p = ControlProblem::new(&b, 0.2, v(&[0.1, -0.4]), 1.0, v(&[0.7, 0.3])).unwrap();
        let c = optimal_control(&p).unwrap();
        assert_relative_eq!(c.trajectory(0.2).unwrap(), p.x.clone(), epsilon = 1e-15);
        assert_relative_eq!(c.trajectory(1.0).unwrap(), p.y.clone(), epsilon = 1e-8 * (1.0 + p.y.norm()));
        for s in [0.5, 0.77] {
            assert_relative_eq!(c.trajectory(s).unwrap(), c.trajectory_by_quadrature(s).unwrap(), epsilon = 1e-8);
        }
        let quad = crate::quadrature::adaptive_simpson_scalar(
            |s| Ok(c.control(s)?.norm_squared()),
            0.2,
            1.0,
            SimpsonTolerance::default(),
        )
        .unwrap();
        assert_relative_eq!(quad, c.cost(), max_relative = 1e-8);
        assert_relative_eq!(c.partial_cost(0.2, 1.0).unwrap(), c.cost(), max_relative = 1e-10);
        let split = c.partial_cost(0.2, 0.6).unwrap() + c.partial_cost(0.6, 1.0).unwrap();
        assert_relative_eq!(split, c.cost(), max_relative = 1e-10);
        assert!(c.trajectory(1.5).is_err());
    }

    #[test]
    fn problem_validation() {
        assert!(ControlProblem::new(&heat(), 1.0, v(&[0.0]), 1.0, v(&[0.0])).is_err());
        assert!(ControlProblem::new(&heat(), 0.0, v(&[0.0, 1.0]), 1.0, v(&[0.0])).is_err());
        let p = ControlProblem::new(&heat(), 0.0, v(&[0.0]), 1.0, v(&[1.0])).unwrap();
        assert!(discrete_least_norm_control(&p, 1).is_err());
    }

    #[test]
    fn kappa_examples() {
        let grid = default_kappa_grid(KAPPA_GRID_POINTS);
        assert_relative_eq!(kappa_estimate(&heat(), &grid).unwrap(), 1.1, max_relative = 1e-12);
        let r = kappa_report(&langevin(), &grid).unwrap();
        assert_relative_eq!(r.blockwise, 1.0, max_relative = 1e-12);
        // √λmax([[1, 1/2], [1/2, 1/3]])
        let top: f64 = (4.0 / 3.0 + (4.0f64 / 9.0 + 1.0).sqrt()) / 2.0;
        assert_relative_eq!(r.operator, top.sqrt(), max_relative = 1e-10);
        let b2 = sys(&[0.0, 0.0, 2.0, 0.0], &[1, 1]);
        assert_relative_eq!(kappa_estimate(&b2, &grid).unwrap(), 2.2, max_relative = 1e-12);
        assert!(kappa_estimate(&heat(), &[]).is_err());
        assert!(kappa_estimate(&heat(), &[0.0]).is_err());
    }

    #[test]
    fn cone_examples() {
        let l = langevin();
        let cone = ConeSpec::new(0.5, 0.25, 1.0, SpaceTimePoint::origin(2)).unwrap();
        assert!(cone.contains(&SpaceTimePoint::from_slice(0.5, &[0.1, 0.0]), &l).unwrap());
        assert!(!cone.contains(&SpaceTimePoint::from_slice(2.0, &[0.0, 0.0]), &l).unwrap());
        assert!(!cone.contains(&SpaceTimePoint::origin(2), &l).unwrap());
        assert!(!cone.contains(&SpaceTimePoint::from_slice(-0.5, &[0.0, 0.0]), &l).unwrap());
        assert!(ConeSpec::new(1.5, 0.25, 1.0, SpaceTimePoint::origin(2)).is_err());
    }

    #[test]
    fn cylinder_examples() {
        let l = langevin();
        let o = SpaceTimePoint::origin(2);
        assert!(cylinder_membership(&o, 1.0, &SpaceTimePoint::from_slice(0.5, &[0.5, 0.0]), &l).unwrap());
        assert!(!cylinder_membership(&o, 1.0, &SpaceTimePoint::from_slice(1.0, &[0.0, 0.0]), &l).unwrap());
        assert!(cylinder_membership(&o, 1.0, &o, &l).unwrap());
        // center (1,(1,0)), ρ = 1/2: offset from the flow is (0, 1/16), dilated
        // by D(2) to (0, 1/2), time 0.125/0.25 = 1/2
        let c = SpaceTimePoint::from_slice(1.0, &[1.0, 0.0]);
        let flow = l.flow(0.125, &c.x).unwrap();
        let p = SpaceTimePoint::new(1.125, flow.clone() + v(&[0.0, 0.0625]));
        assert!(cylinder_membership(&c, 0.5, &p, &l).unwrap());
        let q = SpaceTimePoint::new(1.125, flow + v(&[0.0, 0.13]));
        assert!(!cylinder_membership(&c, 0.5, &q, &l).unwrap());
        assert!(cylinder_membership(&c, 0.0, &p, &l).is_err());
    }
}
