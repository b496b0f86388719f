//! Gaussian fundamental solutions of constant- and time-dependent-coefficient
//! Kolmogorov operators, bound envelopes and their verification helpers.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{DiffusionField, ScalarField};
use crate::gramian::{gramian, gramian_weighted_matrix, Gramian};
use crate::linalg::{check_dim, symmetric_eigenvalues};
use crate::model::{SpaceTimePoint, SystemMatrix};
use crate::quadrature::QuadratureSpec;

const CACHE_LIMIT: usize = 4096;

/// How the diffusion of the kernel's operator depends on time.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelWeight {
    /// `(λ/2) Δ_{m0}`: covariance `λ C(T−t)`.
    Constant(f64),
    /// `(λ(s)/2) Δ_{m0}` with a positive time field.
    TimeScalar(ScalarField),
    /// `Σ a_ij(s) ∂_ij` with a time-only matrix field; diffusion matrix `2a(s)`.
    Coefficient(DiffusionField),
}

/// The transition density of `dX = BX ds + σ dW^w` where `W^w` has the
/// covariance rate described by the weight.
#[derive(Debug)]
pub struct GaussianKernel {
    system: SystemMatrix,
    weight: KernelWeight,
    cache: RwLock<HashMap<(u64, u64), Arc<Gramian>>>,
}

impl Clone for GaussianKernel {
    fn clone(&self) -> Self {
        GaussianKernel {
            system: self.system.clone(),
            weight: self.weight.clone(),
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl GaussianKernel {
    /// `Γ^λ`.
    pub fn new(system: &SystemMatrix, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self::with_weight(system, KernelWeight::Constant(lambda)))
    }

    pub fn time_scalar(system: &SystemMatrix, lambda: ScalarField) -> Result<Self> {
        if !lambda.is_time_only() {
            return Err(Error::Unsupported("kernel weight must depend on time only".into()));
        }
        Ok(Self::with_weight(system, KernelWeight::TimeScalar(lambda)))
    }

    pub fn from_coefficient(system: &SystemMatrix, a: DiffusionField) -> Result<Self> {
        if !a.is_time_only() {
            return Err(Error::Unsupported(
                "closed-form kernels need a diffusion coefficient that depends on time only".into(),
            ));
        }
        check_dim(system.m0(), a.size())?;
        Ok(Self::with_weight(system, KernelWeight::Coefficient(a)))
    }

    fn with_weight(system: &SystemMatrix, weight: KernelWeight) -> Self {
        GaussianKernel {
            system: system.clone(),
            weight,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn system(&self) -> &SystemMatrix {
        &self.system
    }

    pub fn weight(&self) -> &KernelWeight {
        &self.weight
    }

    pub fn lambda(&self) -> Option<f64> {
        match self.weight {
            KernelWeight::Constant(l) => Some(l),
            _ => None,
        }
    }

    /// Diffusion matrix `2a(s)` of the `m0` noisy coordinates.
    pub fn diffusion(&self, s: f64) -> DMatrix<f64> {
        let m0 = self.system.m0();
        match &self.weight {
            KernelWeight::Constant(l) => DMatrix::identity(m0, m0) * *l,
            KernelWeight::TimeScalar(f) => DMatrix::identity(m0, m0) * f.eval(s, &[]),
            KernelWeight::Coefficient(a) => a.eval(s, &[]) * 2.0,
        }
    }

    /// Covariance of the arrival point, cached per `(t, T)`.
    pub fn covariance(&self, t: f64, big_t: f64) -> Result<Arc<Gramian>> {
        if !(big_t > t) || !t.is_finite() || !big_t.is_finite() {
            return Err(Error::invalid(format!("kernel needs T > t, got t={t}, T={big_t}")));
        }
        let key = match self.weight {
            KernelWeight::Constant(_) => (0, (big_t - t).to_bits()),
            _ => (t.to_bits(), big_t.to_bits()),
        };
        if let Some(g) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(g.clone());
        }
        let g = match &self.weight {
            KernelWeight::Constant(l) => gramian(&self.system, big_t - t)?.scaled(*l)?,
            _ => {
                let m0 = self.system.m0();
                gramian_weighted_matrix(
                    &self.system,
                    |s| {
                        let w = self.diffusion(s);
                        if m0 == 1 && !(w[(0, 0)] > 0.0) {
                            return Err(Error::invalid(format!("kernel weight is {} at s = {s}", w[(0, 0)])));
                        }
                        Ok(w)
                    },
                    t,
                    big_t,
                )?
            }
        };
        let g = Arc::new(g);
        let mut cache = self.cache.write().expect("cache lock");
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, g.clone());
        Ok(g)
    }

    /// `ln Γ(t, x; T, y)`.
    pub fn log_density(&self, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
        let d = self.system.dim();
        check_dim(d, x.len())?;
        check_dim(d, y.len())?;
        let cov = self.covariance(t, big_t)?;
        let z = y - self.system.flow(big_t - t, x)?;
        let q = cov.quadratic_form(&z)?;
        Ok(-0.5 * q - 0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * cov.logdet())
    }

    pub fn density(&self, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
        Ok(self.log_density(t, x, big_t, y)?.exp())
    }

    /// The kernel with both times fixed, for repeated evaluation.
    pub fn slice(&self, t: f64, big_t: f64) -> Result<KernelSlice> {
        let cov = self.covariance(t, big_t)?;
        let d = self.system.dim();
        Ok(KernelSlice {
            flow: self.system.exp(big_t - t),
            log_norm: -0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * cov.logdet(),
            cov,
        })
    }
}

/// `Γ(t, ·; T, ·)` at fixed times.
#[derive(Debug, Clone)]
pub struct KernelSlice {
    flow: DMatrix<f64>,
    cov: Arc<Gramian>,
    log_norm: f64,
}

impl KernelSlice {
    pub fn covariance(&self) -> &Gramian {
        &self.cov
    }

    pub fn mean(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.flow.ncols(), x.len())?;
        Ok(&self.flow * x)
    }

    pub fn log_density(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let z = y - self.mean(x)?;
        Ok(self.log_norm - 0.5 * self.cov.quadratic_form(&z)?)
    }
}

pub fn eval_kernel(kernel: &GaussianKernel, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
    kernel.density(t, x, big_t, y)
}

pub fn eval_log_kernel(kernel: &GaussianKernel, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
    kernel.log_density(t, x, big_t, y)
}

fn quadrature_dim(d: usize) -> Result<()> {
    if d > 2 {
        return Err(Error::Unsupported(format!("kernel quadrature is limited to d <= 2, got d = {d}")));
    }
    Ok(())
}

/// `|∫ Γ(t,x;T,y) dy − 1|`, integrated over a dilation-adapted box around the
/// mean that contains `half_width` standard deviations in every direction.
pub fn normalization_residual(kernel: &GaussianKernel, t: f64, x: &DVector<f64>, big_t: f64, spec: &QuadratureSpec) -> Result<f64> {
    let d = kernel.system.dim();
    quadrature_dim(d)?;
    check_dim(d, x.len())?;
    let h = big_t - t;
    let cov = kernel.covariance(t, big_t)?;
    let spread = symmetric_eigenvalues(cov.unit_matrix()).last().copied().unwrap_or(1.0).sqrt();
    let box_spec = QuadratureSpec {
        half_width: spec.half_width * spread,
        ..*spec
    };
    let slice = kernel.slice(t, big_t)?;
    let mean = slice.mean(x)?;
    let dil = kernel.system.structure().dilation_diagonal(h.sqrt())?;
    let log_jac: f64 = dil.iter().map(|v| v.ln()).sum();
    let mass = box_spec.integrate_checked(d, |w| {
        let y = &mean + dil.component_mul(&DVector::from_column_slice(w));
        Ok((slice.log_density(x, &y)? + log_jac).exp())
    })?;
    Ok((mass - 1.0).abs())
}

/// Relative defect of the semigroup identity
/// `∫ Γ(t,x;s,z) Γ(s,z;T,y) dz = Γ(t,x;T,y)`.
///
/// The integral is taken in the whitened coordinates of the Gaussian
/// proportional to the integrand.
pub fn chapman_kolmogorov_residual(
    kernel: &GaussianKernel,
    t: f64,
    x: &DVector<f64>,
    big_t: f64,
    y: &DVector<f64>,
    s: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if !(t < s && s < big_t) {
        return Err(Error::invalid(format!("intermediate time {s} must lie in ({t}, {big_t})")));
    }
    let sys = &kernel.system;
    let d = sys.dim();
    quadrature_dim(d)?;
    check_dim(d, x.len())?;
    check_dim(d, y.len())?;
    let s1 = kernel.covariance(t, s)?;
    let s2 = kernel.covariance(s, big_t)?;
    let m1 = sys.flow(s - t, x)?;
    let f2 = sys.exp(big_t - s);
    // precision of the product Gaussian in z and its mean
    let s1_inv = DMatrix::from_columns(&(0..d).map(|k| s1.solve(&unit(d, k))).collect::<Result<Vec<_>>>()?);
    let s2_inv_f2 = DMatrix::from_columns(&(0..d).map(|k| s2.solve(&f2.column(k).into_owned())).collect::<Result<Vec<_>>>()?);
    let precision = crate::linalg::symmetrize(&(&s1_inv + f2.transpose() * &s2_inv_f2));
    let rhs = &s1_inv * &m1 + s2_inv_f2.transpose() * y;
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Chapman–Kolmogorov precision".into()))?;
    let mu = chol.solve(&rhs);
    let l = chol.l();
    let log_jac = -l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let point = |u: &[f64]| -> Result<DVector<f64>> {
        // Lᵀ w = u gives w with covariance P⁻¹
        let w = l
            .tr_solve_lower_triangular(&DVector::from_column_slice(u))
            .ok_or_else(|| Error::NotPositiveDefinite("Chapman–Kolmogorov precision".into()))?;
        Ok(&mu + w)
    };
    let (first, second) = (kernel.slice(t, s)?, kernel.slice(s, big_t)?);
    let log_pair = |z: &DVector<f64>| -> Result<f64> { Ok(first.log_density(x, z)? + second.log_density(z, y)?) };
    let reference = log_pair(&mu)?;
    let integral = spec.integrate_checked(d, |u| Ok((log_pair(&point(u)?)? - reference + log_jac).exp()))?;
    let direct = kernel.log_density(t, x, big_t, y)?;
    Ok((integral * (reference - direct).exp() - 1.0).abs())
}

fn unit(d: usize, k: usize) -> DVector<f64> {
    DVector::from_fn(d, |i, _| if i == k { 1.0 } else { 0.0 })
}

/// Bounded continuous terminal data for [`cauchy_solution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Constant { value: f64 },
    /// `y_index^power`, clipped to `[-cap, cap]` when a cap is given.
    Monomial {
        index: usize,
        power: i32,
        #[serde(default)]
        cap: Option<f64>,
    },
    /// `height * exp(-|y - center|² / (2 width²))`.
    GaussianBump { center: Vec<f64>, width: f64, height: f64 },
    /// Logistic approximation of the indicator of the ball `|y - center| < radius`.
    SmoothIndicator { center: Vec<f64>, radius: f64, softness: f64 },
}

impl Payoff {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Payoff::Constant { value } => *value,
            Payoff::Monomial { index, power, cap } => {
                let v = y[*index].powi(*power);
                match cap {
                    Some(c) => v.clamp(-c, *c),
                    None => v,
                }
            }
            Payoff::GaussianBump { center, width, height } => {
                let r2: f64 = y.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                height * (-0.5 * r2 / (width * width)).exp()
            }
            Payoff::SmoothIndicator { center, radius, softness } => {
                let r: f64 = y.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                1.0 / (1.0 + ((r - radius) / softness).exp())
            }
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        let ok = match self {
            Payoff::Constant { value } => value.is_finite(),
            Payoff::Monomial { index, power, cap } => *index < d && *power >= 0 && cap.is_none_or(|c| c > 0.0),
            Payoff::GaussianBump { center, width, .. } => center.len() == d && *width > 0.0,
            Payoff::SmoothIndicator { center, radius, softness } => center.len() == d && *radius > 0.0 && *softness > 0.0,
        };
        if !ok {
            return Err(Error::invalid(format!("payoff {self:?} does not fit dimension {d}")));
        }
        Ok(())
    }
}

/// `u(t, x) = ∫ Γ(t,x;T,y) φ(y) dy`, integrated in the whitened coordinates
/// of the arrival Gaussian.
pub fn cauchy_solution(
    kernel: &GaussianKernel,
    phi: &Payoff,
    t: f64,
    x: &DVector<f64>,
    big_t: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let d = kernel.system.dim();
    quadrature_dim(d)?;
    check_dim(d, x.len())?;
    phi.check(d)?;
    let cov = kernel.covariance(t, big_t)?;
    let mean = kernel.system.flow(big_t - t, x)?;
    let norm = -0.5 * d as f64 * (2.0 * PI).ln();
    spec.integrate_checked(d, |u| {
        let u = DVector::from_column_slice(u);
        let y = &mean + cov.color(&u)?;
        Ok(phi.eval(y.as_slice()) * (norm - 0.5 * u.norm_squared()).exp())
    })
}

/// Backward operator residual `|L Γ| / Γ` in the `(t, x)` variables, with the
/// drift of `operator` (normally the kernel's own system) and the kernel's
/// diffusion.
///
/// Centered differences: the step for a coordinate of block `j` is
/// `h (T−t)^{(2j+1)/2}` and the time step is `h (T−t)`.
pub fn pde_residual_for(
    kernel: &GaussianKernel,
    operator: &SystemMatrix,
    t: f64,
    x: &DVector<f64>,
    big_t: f64,
    y: &DVector<f64>,
    h: f64,
) -> Result<f64> {
    let horizon = big_t - t;
    if !(h > 0.0 && h < 0.5) || !(horizon > 10.0 * h * h) {
        return Err(Error::invalid(format!("step {h} is too large for horizon {horizon}")));
    }
    let d = kernel.system.dim();
    check_dim(d, operator.dim())?;
    check_dim(d, x.len())?;
    let m0 = kernel.system.m0();
    let base = kernel.log_density(t, x, big_t, y)?;
    let g = |tt: f64, xx: &DVector<f64>| -> Result<f64> { Ok((kernel.log_density(tt, xx, big_t, y)? - base).exp()) };
    let steps = kernel.system.structure().dilation_diagonal(horizon.sqrt())? * h;
    let shifted = |pairs: &[(usize, f64)]| {
        let mut v = x.clone();
        for &(i, s) in pairs {
            v[i] += s;
        }
        v
    };
    let dt = h * horizon;
    let mut residual = (g(t + dt, x)? - g(t - dt, x)?) / (2.0 * dt);
    let bx = operator.matrix() * x;
    for i in 0..d {
        let hi = steps[i];
        let di = (g(t, &shifted(&[(i, hi)]))? - g(t, &shifted(&[(i, -hi)]))?) / (2.0 * hi);
        residual += bx[i] * di;
    }
    // a = w/2 where w is the diffusion matrix of the kernel
    let a = kernel.diffusion(t) * 0.5;
    for i in 0..m0 {
        let hi = steps[i];
        let second = (g(t, &shifted(&[(i, hi)]))? - 2.0 + g(t, &shifted(&[(i, -hi)]))?) / (hi * hi);
        residual += a[(i, i)] * second;
        for j in (i + 1)..m0 {
            if a[(i, j)] == 0.0 && a[(j, i)] == 0.0 {
                continue;
            }
            let hj = steps[j];
            let mixed = (g(t, &shifted(&[(i, hi), (j, hj)]))? - g(t, &shifted(&[(i, hi), (j, -hj)]))?
                - g(t, &shifted(&[(i, -hi), (j, hj)]))?
                + g(t, &shifted(&[(i, -hi), (j, -hj)]))?)
                / (4.0 * hi * hj);
            residual += (a[(i, j)] + a[(j, i)]) * mixed;
        }
    }
    if !residual.is_finite() {
        return Err(Error::NonFinite("PDE residual"));
    }
    Ok(residual.abs())
}

pub fn pde_residual(kernel: &GaussianKernel, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>, h: f64) -> Result<f64> {
    pde_residual_for(kernel, &kernel.system, t, x, big_t, y, h)
}

/// Least-squares slope of `ln residual` against `ln h`.
pub fn convergence_order(steps: &[f64], residuals: &[f64]) -> Result<f64> {
    if steps.len() != residuals.len() || steps.len() < 2 {
        return Err(Error::invalid("convergence order needs at least two (step, residual) pairs"));
    }
    if steps.iter().chain(residuals).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("convergence order needs positive steps and residuals"));
    }
    let xs: Vec<f64> = steps.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Comparison constants `C⁻ Γ^{λ⁻} ≤ Γ ≤ C⁺ Γ^{λ⁺}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEnvelope {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub c_minus: f64,
    pub c_plus: f64,
}

impl BoundEnvelope {
    pub fn new(lambda_minus: f64, lambda_plus: f64, c_minus: f64, c_plus: f64) -> Result<Self> {
        let all_positive = [lambda_minus, lambda_plus, c_minus, c_plus]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !all_positive || lambda_minus > lambda_plus {
            return Err(Error::invalid(format!(
                "envelope needs 0 < λ⁻ ≤ λ⁺ and positive C±, got λ=({lambda_minus}, {lambda_plus}), C=({c_minus}, {c_plus})"
            )));
        }
        Ok(BoundEnvelope {
            lambda_minus,
            lambda_plus,
            c_minus,
            c_plus,
        })
    }

    /// `(ln C⁻Γ^{λ⁻}, ln C⁺Γ^{λ⁺})`.
    pub fn log_eval(&self, system: &SystemMatrix, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<(f64, f64)> {
        let lo = GaussianKernel::new(system, self.lambda_minus)?.log_density(t, x, big_t, y)?;
        let hi = GaussianKernel::new(system, self.lambda_plus)?.log_density(t, x, big_t, y)?;
        Ok((self.c_minus.ln() + lo, self.c_plus.ln() + hi))
    }
}

pub fn bound_envelope_eval(
    env: &BoundEnvelope,
    system: &SystemMatrix,
    t: f64,
    x: &DVector<f64>,
    big_t: f64,
    y: &DVector<f64>,
) -> Result<(f64, f64)> {
    let (lo, hi) = env.log_eval(system, t, x, big_t, y)?;
    Ok((lo.exp(), hi.exp()))
}

fn unit_horizon(t: f64, big_t: f64) -> Result<f64> {
    let h = big_t - t;
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::invalid(format!("bound forms need 0 < T−t ≤ 1, got {h}")));
    }
    Ok(h)
}

fn positive_constant(c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("form constant must be positive, got {c}")));
    }
    Ok(())
}

/// `|D(h^{-1/2})(y − e^{hB}x)|²` with `h = T − t`.
pub fn dilated_offset_sq(system: &SystemMatrix, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
    let h = big_t - t;
    check_dim(system.dim(), y.len())?;
    let z = y - system.flow(h, x)?;
    Ok(system.structure().dilate(1.0 / h.sqrt(), &z)?.norm_squared())
}

/// `V = <C⁻¹(h) z, z>` with `z = y − e^{hB}x`.
pub fn transition_cost(system: &SystemMatrix, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
    let h = big_t - t;
    check_dim(system.dim(), y.len())?;
    let z = y - system.flow(h, x)?;
    gramian(system, h)?.quadratic_form(&z)
}

pub fn log_aronson_upper_form(c_a: f64, system: &SystemMatrix, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
    positive_constant(c_a)?;
    let h = unit_horizon(t, big_t)?;
    let q = system.structure().homogeneous_dimension() as f64;
    Ok(c_a.ln() - 0.5 * q * h.ln() - dilated_offset_sq(system, t, x, big_t, y)? / c_a)
}

/// `c_A h^{−Q/2} exp(−|D(h^{−1/2})(y − e^{hB}x)|² / c_A)`.
pub fn aronson_upper_form(c_a: f64, system: &SystemMatrix, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
    Ok(log_aronson_upper_form(c_a, system, t, x, big_t, y)?.exp())
}

pub fn log_lower_bound_form(c_d: f64, system: &SystemMatrix, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
    positive_constant(c_d)?;
    let h = unit_horizon(t, big_t)?;
    let q = system.structure().homogeneous_dimension() as f64;
    Ok(c_d.ln() - 0.5 * q * h.ln() - transition_cost(system, t, x, big_t, y)? / c_d)
}

/// `c_D h^{−Q/2} exp(−V / c_D)`.
pub fn lower_bound_form(c_d: f64, system: &SystemMatrix, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
    Ok(log_lower_bound_form(c_d, system, t, x, big_t, y)?.exp())
}

pub fn log_covariance_upper_form(c_l: f64, system: &SystemMatrix, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
    positive_constant(c_l)?;
    let h = unit_horizon(t, big_t)?;
    let g = gramian(system, h)?;
    let z = y - system.flow(h, x)?;
    Ok(c_l.ln() - 0.5 * g.logdet() - g.quadratic_form(&z)? / c_l)
}

/// `c_L / √det C(h) · exp(−V / c_L)`.
pub fn covariance_upper_form(c_l: f64, system: &SystemMatrix, t: f64, x: &DVector<f64>, big_t: f64, y: &DVector<f64>) -> Result<f64> {
    Ok(log_covariance_upper_form(c_l, system, t, x, big_t, y)?.exp())
}

/// Smallest or largest `c` with `ln c − e/c` on the right side of `target`.
/// `ln c − e/c` is increasing in `c`, so the root is found by bisection in `ln c`.
fn solve_form_constant(target: f64, exponent: f64) -> f64 {
    let f = |lc: f64| lc - exponent * (-lc).exp() - target;
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    if f(lo) > 0.0 {
        return lo.exp();
    }
    if f(hi) < 0.0 {
        return hi.exp();
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// A transition `(t, x) → (T, y)`.
pub type Transition = (SpaceTimePoint, SpaceTimePoint);

/// Smallest `c_A` for which the Aronson-type form dominates the kernel on
/// every transition.
pub fn fit_aronson_constant(kernel: &GaussianKernel, transitions: &[Transition]) -> Result<f64> {
    fit_constant(kernel, transitions, true, |sys, a, b| dilated_offset_sq(sys, a.t, &a.x, b.t, &b.x))
}

/// Largest `c_D` for which the lower form stays below the kernel on every
/// transition.
pub fn fit_lower_constant(kernel: &GaussianKernel, transitions: &[Transition]) -> Result<f64> {
    fit_constant(kernel, transitions, false, |sys, a, b| transition_cost(sys, a.t, &a.x, b.t, &b.x))
}

fn fit_constant<E>(kernel: &GaussianKernel, transitions: &[Transition], upper: bool, exponent: E) -> Result<f64>
where
    E: Fn(&SystemMatrix, &SpaceTimePoint, &SpaceTimePoint) -> Result<f64>,
{
    if transitions.is_empty() {
        return Err(Error::invalid("constant fit needs at least one transition"));
    }
    let sys = &kernel.system;
    let q = sys.structure().homogeneous_dimension() as f64;
    let mut best: f64 = if upper { 0.0 } else { f64::INFINITY };
    for (a, b) in transitions {
        let h = unit_horizon(a.t, b.t)?;
        let target = kernel.log_density(a.t, &a.x, b.t, &b.x)? + 0.5 * q * h.ln();
        let c = solve_form_constant(target, exponent(sys, a, b)?);
        best = if upper { best.max(c) } else { best.min(c) };
    }
    Ok(best)
}
