//! Coefficient fields of the operator and the ellipticity / boundedness checks.
//!
//! Measurable coefficients cannot be serialized in general, so fields come
//! from a closed set of forms: constants, sinusoids in time or space, and
//! one-dimensional tables with nearest-neighbour lookup.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemMatrix;

/// A scalar function of `(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarField {
    Constant {
        value: f64,
    },
    /// `mean + amplitude * sin(2π frequency t + phase)`.
    TimeSinusoid {
        mean: f64,
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `mean + amplitude * sin(2π <k, x> + phase)`.
    SpaceSinusoid {
        mean: f64,
        amplitude: f64,
        wavevector: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
    /// Nearest-neighbour table along time (`coordinate` absent) or along one
    /// spatial coordinate.
    Tabulated {
        #[serde(default)]
        coordinate: Option<usize>,
        origin: f64,
        step: f64,
        values: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    pub fn time_sinusoid(mean: f64, amplitude: f64) -> Self {
        ScalarField::TimeSinusoid {
            mean,
            amplitude,
            frequency: 1.0,
            phase: 0.0,
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            ScalarField::Constant { value } => *value,
            ScalarField::TimeSinusoid {
                mean,
                amplitude,
                frequency,
                phase,
            } => mean + amplitude * (2.0 * PI * frequency * t + phase).sin(),
            ScalarField::SpaceSinusoid {
                mean,
                amplitude,
                wavevector,
                phase,
            } => {
                let arg: f64 = wavevector.iter().zip(x).map(|(k, v)| k * v).sum();
                mean + amplitude * (2.0 * PI * arg + phase).sin()
            }
            ScalarField::Tabulated {
                coordinate,
                origin,
                step,
                values,
            } => {
                let v = match coordinate {
                    None => t,
                    Some(i) => x[*i],
                };
                let idx = ((v - origin) / step).round();
                let idx = idx.clamp(0.0, (values.len() - 1) as f64) as usize;
                values[idx]
            }
        }
    }

    /// Spatial gradient, when the field is differentiable in `x`.
    pub fn gradient(&self, _t: f64, x: &[f64], out: &mut [f64]) -> bool {
        match self {
            ScalarField::SpaceSinusoid {
                amplitude,
                wavevector,
                phase,
                ..
            } => {
                let arg: f64 = wavevector.iter().zip(x).map(|(k, v)| k * v).sum();
                let c = amplitude * 2.0 * PI * (2.0 * PI * arg + phase).cos();
                for (o, k) in out.iter_mut().zip(wavevector) {
                    *o = c * k;
                }
                true
            }
            ScalarField::Tabulated {
                coordinate: Some(_), ..
            } => false,
            _ => {
                out.iter_mut().for_each(|o| *o = 0.0);
                true
            }
        }
    }

    pub fn is_time_only(&self) -> bool {
        !matches!(
            self,
            ScalarField::SpaceSinusoid { .. } | ScalarField::Tabulated { coordinate: Some(_), .. }
        )
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarField::Constant { value } => *value == 0.0,
            ScalarField::TimeSinusoid { mean, amplitude, .. } | ScalarField::SpaceSinusoid { mean, amplitude, .. } => {
                *mean == 0.0 && *amplitude == 0.0
            }
            ScalarField::Tabulated { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        let ok = match self {
            ScalarField::Constant { value } => finite(*value),
            ScalarField::TimeSinusoid {
                mean,
                amplitude,
                frequency,
                phase,
            } => [*mean, *amplitude, *frequency, *phase].into_iter().all(finite),
            ScalarField::SpaceSinusoid {
                mean,
                amplitude,
                wavevector,
                phase,
            } => {
                if wavevector.len() != d {
                    return Err(Error::Config(format!(
                        "wavevector has length {}, state dimension is {d}",
                        wavevector.len()
                    )));
                }
                [*mean, *amplitude, *phase].into_iter().chain(wavevector.iter().cloned()).all(finite)
            }
            ScalarField::Tabulated {
                coordinate,
                origin,
                step,
                values,
            } => {
                if values.is_empty() || !(*step > 0.0) {
                    return Err(Error::Config("tabulated field needs values and a positive step".into()));
                }
                if coordinate.is_some_and(|c| c >= d) {
                    return Err(Error::Config(format!("tabulated coordinate out of range for dimension {d}")));
                }
                finite(*origin) && values.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite("coefficient field parameters"))
        }
    }
}

/// The symmetric `m0 × m0` diffusion block `a(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionField {
    /// `scale(t, x) * matrix`.
    Scaled { matrix: Vec<Vec<f64>>, scale: ScalarField },
    /// Every entry its own field; must be symmetric.
    Entrywise { entries: Vec<Vec<ScalarField>> },
}

impl DiffusionField {
    /// `(λ/2) I_{m0}`.
    pub fn isotropic(m0: usize, half_lambda: ScalarField) -> Self {
        DiffusionField::Scaled {
            matrix: identity_rows(m0),
            scale: half_lambda,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            DiffusionField::Scaled { matrix, .. } => matrix.len(),
            DiffusionField::Entrywise { entries } => entries.len(),
        }
    }

    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let m = self.size();
        match self {
            DiffusionField::Scaled { matrix, scale } => {
                let s = scale.eval(t, x);
                for i in 0..m {
                    for j in 0..m {
                        out[i * m + j] = s * matrix[i][j];
                    }
                }
            }
            DiffusionField::Entrywise { entries } => {
                for i in 0..m {
                    for j in 0..m {
                        out[i * m + j] = entries[i][j].eval(t, x);
                    }
                }
            }
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let m = self.size();
        let mut buf = vec![0.0; m * m];
        self.eval_into(t, x, &mut buf);
        DMatrix::from_row_slice(m, m, &buf)
    }

    /// `(Σ_j ∂_j a_ij)_i`; `false` when some entry is not differentiable.
    pub fn divergence_into(&self, t: f64, x: &[f64], grad: &mut [f64], out: &mut [f64]) -> bool {
        let m = self.size();
        match self {
            DiffusionField::Scaled { matrix, scale } => {
                if !scale.gradient(t, x, grad) {
                    return false;
                }
                for i in 0..m {
                    out[i] = (0..m).map(|j| matrix[i][j] * grad[j]).sum();
                }
            }
            DiffusionField::Entrywise { entries } => {
                out[..m].iter_mut().for_each(|o| *o = 0.0);
                for i in 0..m {
                    for j in 0..m {
                        if !entries[i][j].gradient(t, x, grad) {
                            return false;
                        }
                        out[i] += grad[j];
                    }
                }
            }
        }
        true
    }

    pub fn is_time_only(&self) -> bool {
        match self {
            DiffusionField::Scaled { scale, .. } => scale.is_time_only(),
            DiffusionField::Entrywise { entries } => entries.iter().flatten().all(ScalarField::is_time_only),
        }
    }

    fn check(&self, m0: usize, d: usize) -> Result<()> {
        if self.size() != m0 {
            return Err(Error::Config(format!("diffusion block is {}x.., expected m0 = {m0}", self.size())));
        }
        match self {
            DiffusionField::Scaled { matrix, scale } => {
                if matrix.iter().any(|r| r.len() != m0) {
                    return Err(Error::Config("diffusion matrix must be square".into()));
                }
                if matrix.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("diffusion matrix"));
                }
                scale.check(d)
            }
            DiffusionField::Entrywise { entries } => {
                if entries.iter().any(|r| r.len() != m0) {
                    return Err(Error::Config("diffusion entries must be square".into()));
                }
                entries.iter().flatten().try_for_each(|f| f.check(d))
            }
        }
    }
}

pub(crate) fn identity_rows(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// All coefficients of the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub a: DiffusionField,
    /// Divergence-form first-order coefficients `a_i` (empty means zero).
    #[serde(default)]
    pub a_low: Vec<ScalarField>,
    /// Transport coefficients `b_i` (empty means zero).
    #[serde(default)]
    pub b_low: Vec<ScalarField>,
    #[serde(default = "zero_field")]
    pub c: ScalarField,
}

fn zero_field() -> ScalarField {
    ScalarField::constant(0.0)
}

impl Coefficients {
    /// Coefficients of `(λ/2) Δ_{m0}` with no lower-order terms.
    pub fn principal(m0: usize, lambda: f64) -> Self {
        Coefficients {
            a: DiffusionField::isotropic(m0, ScalarField::constant(0.5 * lambda)),
            a_low: Vec::new(),
            b_low: Vec::new(),
            c: zero_field(),
        }
    }

    pub fn has_lower_order(&self) -> bool {
        !(self.a_low.iter().all(ScalarField::is_zero) && self.b_low.iter().all(ScalarField::is_zero) && self.c.is_zero())
    }

    pub fn is_time_only(&self) -> bool {
        self.a.is_time_only()
            && self.a_low.iter().all(ScalarField::is_time_only)
            && self.b_low.iter().all(ScalarField::is_time_only)
            && self.c.is_time_only()
    }
}

/// Sample lattice on which ellipticity and boundedness are checked.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub times: Vec<f64>,
    pub points: Vec<DVector<f64>>,
    pub directions: Vec<DVector<f64>>,
}

impl SampleGrid {
    /// `n` times `k/n` on `[0, 1)`, `n` Halton points in `[-extent, extent]^d`
    /// and `n` unit directions in `R^{m0}`.
    pub fn lattice(d: usize, m0: usize, n: usize, extent: f64) -> Self {
        let times = (0..n).map(|k| k as f64 / n as f64).collect();
        let points = (0..n)
            .map(|k| DVector::from_iterator(d, (0..d).map(|i| extent * (2.0 * halton(k + 1, PRIMES[i % PRIMES.len()]) - 1.0))))
            .collect();
        SampleGrid {
            times,
            points,
            directions: unit_directions(m0, n),
        }
    }

    pub fn default_for(system: &SystemMatrix) -> Self {
        SampleGrid::lattice(system.dim(), system.m0(), 32, 2.0)
    }
}

const PRIMES: [usize; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

fn halton(mut k: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while k > 0 {
        f /= base as f64;
        r += f * (k % base) as f64;
        k /= base;
    }
    r
}

/// Deterministic unit vectors in `R^dim`: `±1` in one dimension, equally
/// spaced angles in two, normalized Halton-box points otherwise.
pub fn unit_directions(dim: usize, n: usize) -> Vec<DVector<f64>> {
    match dim {
        0 => Vec::new(),
        1 => (0..n).map(|k| DVector::from_element(1, if k % 2 == 0 { 1.0 } else { -1.0 })).collect(),
        2 => (0..n)
            .map(|k| {
                let a = PI * k as f64 / n as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        _ => {
            let mut out: Vec<DVector<f64>> = (0..dim)
                .map(|i| DVector::from_fn(dim, |j, _| if i == j { 1.0 } else { 0.0 }))
                .collect();
            let mut k = 1;
            while out.len() < n.max(dim) {
                let v = DVector::from_iterator(dim, (0..dim).map(|i| 2.0 * halton(k, PRIMES[i % PRIMES.len()]) - 1.0));
                k += 1;
                let norm = v.norm();
                if norm > 1e-3 {
                    out.push(v / norm);
                }
            }
            out
        }
    }
}

/// Result of [`ellipticity_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticityReport {
    /// Smallest μ compatible with the lower bound `μ⁻¹|ξ|² ≤ <aξ, ξ>`.
    pub mu_low: f64,
    /// Smallest μ compatible with the upper bound `<aξ, ξ> ≤ μ|ξ|²`.
    pub mu_high: f64,
    /// Extremes of `<aξ, ξ>` over the samples.
    pub a_min: f64,
    pub a_max: f64,
    /// Largest sampled |a_i|, |b_i|, |c|.
    pub lower_order_sup: f64,
    pub passes_ellipticity: bool,
    pub passes_bound: bool,
}

impl EllipticityReport {
    pub fn passes(&self) -> bool {
        self.passes_ellipticity && self.passes_bound
    }
}

/// An operator of the class: drift structure, coefficients and the declared
/// constants μ (ellipticity) and M (bound on lower-order terms).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub system: SystemMatrix,
    pub coefficients: Coefficients,
    pub mu: f64,
    pub m_bound: f64,
}

impl OperatorSpec {
    /// Checks field shapes and parameters (not ellipticity; see [`ellipticity_check`]).
    pub fn new(system: SystemMatrix, coefficients: Coefficients, mu: f64, m_bound: f64) -> Result<Self> {
        let (m0, d) = (system.m0(), system.dim());
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {mu}")));
        }
        if !(m_bound >= 0.0 && m_bound.is_finite()) {
            return Err(Error::Config(format!("M must be non-negative, got {m_bound}")));
        }
        coefficients.a.check(m0, d)?;
        for (name, v) in [("a_low", &coefficients.a_low), ("b_low", &coefficients.b_low)] {
            if !v.is_empty() && v.len() != m0 {
                return Err(Error::Config(format!("{name} has {} entries, expected m0 = {m0}", v.len())));
            }
            v.iter().try_for_each(|f| f.check(d))?;
        }
        coefficients.c.check(d)?;
        Ok(OperatorSpec {
            system,
            coefficients,
            mu,
            m_bound,
        })
    }

    /// The comparison operator `(λ/2) Δ_{m0} + <Bx, D> + ∂_t` on the same drift.
    pub fn principal_part(&self, lambda: f64) -> Result<OperatorSpec> {
        principal_part(self, lambda)
    }
}

pub fn principal_part(spec: &OperatorSpec, lambda: f64) -> Result<OperatorSpec> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let half = 0.5 * lambda;
    OperatorSpec::new(
        spec.system.clone(),
        Coefficients::principal(spec.system.m0(), lambda),
        half.max(1.0 / half),
        spec.m_bound,
    )
}

/// Samples `a` and the lower-order coefficients on the grid and reports the
/// tightest constants. Fails on a non-symmetric, non-finite or
/// non-positive-definite sample of `a`.
pub fn ellipticity_check(spec: &OperatorSpec, grid: &SampleGrid) -> Result<EllipticityReport> {
    if grid.times.is_empty() || grid.points.is_empty() || grid.directions.is_empty() {
        return Err(Error::invalid("ellipticity check needs non-empty samples"));
    }
    let m0 = spec.system.m0();
    if let Some(dir) = grid.directions.iter().find(|d| d.len() != m0) {
        return Err(Error::DimensionMismatch {
            expected: m0,
            found: dir.len(),
        });
    }
    let c = &spec.coefficients;
    let (mut a_min, mut a_max, mut sup) = (f64::INFINITY, 0.0f64, 0.0f64);
    for &t in &grid.times {
        for p in &grid.points {
            let x = p.as_slice();
            let a = c.a.eval(t, x);
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("diffusion coefficient sample"));
            }
            let asym = (&a - a.transpose()).amax();
            if asym > 1e-12 * a.amax().max(1.0) {
                return Err(Error::Coefficient {
                    clause: "symmetry",
                    message: format!("a(t={t}, x={:?}) is not symmetric", x),
                });
            }
            let min_eig = SymmetricEigen::new(a.clone()).eigenvalues.min();
            if !(min_eig > 0.0) {
                return Err(Error::NotPositiveDefinite(format!(
                    "a(t={t}, x={x:?}) has eigenvalue {min_eig}"
                )));
            }
            for dir in &grid.directions {
                let n2 = dir.norm_squared();
                let q = dir.dot(&(&a * dir)) / n2;
                a_min = a_min.min(q);
                a_max = a_max.max(q);
            }
            let mut lower = c.a_low.iter().chain(&c.b_low).map(|f| f.eval(t, x)).collect::<Vec<_>>();
            lower.push(c.c.eval(t, x));
            for v in lower {
                if !v.is_finite() {
                    return Err(Error::NonFinite("lower-order coefficient sample"));
                }
                sup = sup.max(v.abs());
            }
        }
    }
    let mu_low = 1.0 / a_min;
    let mu_high = a_max;
    let slack = 1e-12;
    Ok(EllipticityReport {
        mu_low,
        mu_high,
        a_min,
        a_max,
        lower_order_sup: sup,
        passes_ellipticity: mu_low <= spec.mu * (1.0 + slack) && mu_high <= spec.mu * (1.0 + slack),
        passes_bound: sup <= spec.m_bound * (1.0 + slack) + slack,
    })
}
