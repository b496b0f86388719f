//! Controllability Gramians `C(t) = ∫_0^t e^{sB} σ σᵀ e^{sBᵀ} ds` and their
//! time-weighted variants.
//!
//! A Gramian is stored through its dilation-rescaled "unit" form
//! `Ĉ = D(1/√t) C(t) D(1/√t)`, which is the unit-time Gramian of the scaled
//! drift `B^{(√t)}`. `Ĉ` stays well conditioned as `t → 0` even though the
//! entries of `C(t)` span `t` to `t^{2ν+1}`; every quadratic form, solve and
//! log-determinant goes through it.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::linalg::{check_dim, matrix_exponential, symmetric_eigenvalues, symmetrize};
use crate::model::{scaled_system, SystemMatrix};
use crate::quadrature::{adaptive_simpson, SimpsonTolerance};

/// A symmetric positive-definite covariance over a horizon, with its
/// Cholesky factor.
#[derive(Debug, Clone)]
pub struct Gramian {
    system: SystemMatrix,
    horizon: f64,
    unit: DMatrix<f64>,
    unit_chol: DMatrix<f64>,
    matrix: DMatrix<f64>,
    chol: DMatrix<f64>,
    logdet: f64,
}

impl Gramian {
    pub(crate) fn from_unit(system: &SystemMatrix, horizon: f64, unit: DMatrix<f64>) -> Result<Gramian> {
        let unit = symmetrize(&unit);
        if unit.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gramian"));
        }
        let eig = symmetric_eigenvalues(&unit);
        let (lo, hi) = (eig[0], *eig.last().expect("non-empty"));
        if !(lo > 1e-13 * hi) {
            return Err(Error::SingularGramian { horizon });
        }
        let unit_chol = unit
            .clone()
            .cholesky()
            .ok_or(Error::SingularGramian { horizon })?
            .l();
        let structure = system.structure();
        let root = horizon.sqrt();
        let dil = structure.dilation_diagonal(root)?;
        let matrix = DMatrix::from_fn(unit.nrows(), unit.ncols(), |i, j| dil[i] * unit[(i, j)] * dil[j]);
        let chol = DMatrix::from_fn(unit.nrows(), unit.ncols(), |i, j| dil[i] * unit_chol[(i, j)]);
        let logdet_unit: f64 = unit_chol.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let logdet = logdet_unit + structure.homogeneous_dimension() as f64 * horizon.ln();
        Ok(Gramian {
            system: system.clone(),
            horizon,
            unit,
            unit_chol,
            matrix,
            chol,
            logdet,
        })
    }

    pub fn system(&self) -> &SystemMatrix {
        &self.system
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `C`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular `L` with `L Lᵀ = C`.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `D(1/√t) C D(1/√t)`.
    pub fn unit_matrix(&self) -> &DMatrix<f64> {
        &self.unit
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn det(&self) -> f64 {
        self.logdet.exp()
    }

    fn inv_dilate(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.matrix.nrows(), z.len())?;
        let dil = self.system.structure().dilation_diagonal(1.0 / self.horizon.sqrt())?;
        Ok(dil.component_mul(z))
    }

    /// `u` with `|u|² = <C⁻¹z, z>`, i.e. `L⁻¹ z`.
    pub fn whiten(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let scaled = self.inv_dilate(z)?;
        self.unit_chol
            .solve_lower_triangular(&scaled)
            .ok_or(Error::SingularGramian { horizon: self.horizon })
    }

    /// `L u`.
    pub fn color(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.matrix.nrows(), u.len())?;
        Ok(&self.chol * u)
    }

    /// `<C⁻¹ z, z>` through triangular solves.
    pub fn quadratic_form(&self, z: &DVector<f64>) -> Result<f64> {
        Ok(self.whiten(z)?.norm_squared())
    }

    /// `C⁻¹ z`.
    pub fn solve(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.whiten(z)?;
        let v = self
            .unit_chol
            .tr_solve_lower_triangular(&u)
            .ok_or(Error::SingularGramian { horizon: self.horizon })?;
        self.inv_dilate(&v)
    }

    /// `λ C`.
    pub fn scaled(&self, lambda: f64) -> Result<Gramian> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("covariance scale must be positive, got {lambda}")));
        }
        let d = self.matrix.nrows() as f64;
        Ok(Gramian {
            system: self.system.clone(),
            horizon: self.horizon,
            unit: &self.unit * lambda,
            unit_chol: &self.unit_chol * lambda.sqrt(),
            matrix: &self.matrix * lambda,
            chol: &self.chol * lambda.sqrt(),
            logdet: self.logdet + d * lambda.ln(),
        })
    }

    /// Relative Frobenius gap between this Gramian and plain adaptive Simpson
    /// quadrature of the defining integral.
    pub fn cross_check(&self) -> Result<f64> {
        let q = gramian_by_quadrature(&self.system, self.horizon)?;
        Ok((&q - &self.matrix).norm() / self.matrix.norm())
    }
}

/// Van Loan: the top-right block of `exp(t [[-B, σσᵀ], [0, Bᵀ]])`, premultiplied
/// by the transposed bottom-right block, equals `∫_0^t e^{sB} σσᵀ e^{sBᵀ} ds`.
fn van_loan(b: &DMatrix<f64>, m0: usize, t: f64) -> Result<DMatrix<f64>> {
    let d = b.nrows();
    let mut big = DMatrix::zeros(2 * d, 2 * d);
    big.view_mut((0, 0), (d, d)).copy_from(&(-b));
    for i in 0..m0 {
        big[(i, d + i)] = 1.0;
    }
    big.view_mut((d, d), (d, d)).copy_from(&b.transpose());
    let e = matrix_exponential(&big, t)?;
    let f12 = e.view((0, d), (d, d));
    let f22 = e.view((d, d), (d, d));
    Ok(f22.transpose() * f12)
}

/// `C(t)` for `t > 0`.
pub fn gramian(system: &SystemMatrix, t: f64) -> Result<Gramian> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("Gramian horizon must be positive, got {t}")));
    }
    let scaled = scaled_system(system, t.sqrt())?;
    let unit = van_loan(scaled.matrix(), system.m0(), 1.0)?;
    Gramian::from_unit(system, t, unit)
}

/// `C(t)` as a bare matrix, skipping the factorization and definiteness check.
pub(crate) fn gramian_matrix(system: &SystemMatrix, t: f64) -> Result<DMatrix<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("Gramian horizon must be positive, got {t}")));
    }
    let unit = van_loan(scaled_system(system, t.sqrt())?.matrix(), system.m0(), 1.0)?;
    let dil = system.structure().dilation_diagonal(t.sqrt())?;
    Ok(DMatrix::from_fn(unit.nrows(), unit.ncols(), |i, j| {
        0.5 * dil[i] * (unit[(i, j)] + unit[(j, i)]) * dil[j]
    }))
}

/// Gramian of the homogeneous part (all `*`-blocks zeroed), `C₀(t)`.
pub fn gramian_homogeneous(system: &SystemMatrix, t: f64) -> Result<Gramian> {
    gramian(&system.homogeneous_part(), t)
}

/// Adaptive Simpson quadrature of the defining integral, on the original
/// (unscaled) integrand.
pub fn gramian_by_quadrature(system: &SystemMatrix, t: f64) -> Result<DMatrix<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("Gramian horizon must be positive, got {t}")));
    }
    let sigma = system.sigma();
    adaptive_simpson(
        |s| {
            let v = matrix_exponential(system.matrix(), s)? * &sigma;
            Ok(&v * v.transpose())
        },
        0.0,
        t,
        SimpsonTolerance::default(),
    )
}

/// `∫_t^T e^{(T-s)B} σ W(s) σᵀ e^{(T-s)Bᵀ} ds` for an `m0 × m0` weight `W(s)`.
pub fn gramian_weighted_matrix<W>(system: &SystemMatrix, weight: W, t: f64, big_t: f64) -> Result<Gramian>
where
    W: Fn(f64) -> Result<DMatrix<f64>>,
{
    if !(big_t > t) || !t.is_finite() || !big_t.is_finite() {
        return Err(Error::invalid(format!("weighted Gramian needs T > t, got t={t}, T={big_t}")));
    }
    let h = big_t - t;
    let scaled = scaled_system(system, h.sqrt())?;
    let sigma = system.sigma();
    let unit = adaptive_simpson(
        |u| {
            let w = weight(big_t - h * u)?;
            let v = matrix_exponential(scaled.matrix(), u)? * &sigma;
            Ok(&v * w * v.transpose())
        },
        0.0,
        1.0,
        SimpsonTolerance::default(),
    )?;
    Gramian::from_unit(system, h, unit)
}

/// Weighted Gramian for a scalar time field `λ(s)`; reduces to `C(T-t)` when `λ ≡ 1`.
pub fn gramian_weighted(system: &SystemMatrix, lambda: &ScalarField, t: f64, big_t: f64) -> Result<Gramian> {
    if !lambda.is_time_only() {
        return Err(Error::Unsupported("weighted Gramian needs a time-only field".into()));
    }
    let m0 = system.m0();
    gramian_weighted_matrix(
        system,
        |s| {
            let l = lambda.eval(s, &[]);
            if !(l > 0.0) {
                return Err(Error::invalid(format!("weight field is {l} at s = {s}")));
            }
            Ok(DMatrix::identity(m0, m0) * l)
        },
        t,
        big_t,
    )
}

pub fn quadratic_form(g: &Gramian, z: &DVector<f64>) -> Result<f64> {
    g.quadratic_form(z)
}

/// Sampled comparison constants between `C` and its homogeneous counterpart `C₀`.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub tau_grid: Vec<f64>,
    /// `det C(τ) / det C₀(τ)` per τ.
    pub det_ratio: Vec<f64>,
    /// Extremes of `<C⁻¹z,z> / <C₀⁻¹z,z>` over the directions, per τ.
    pub quadratic_ratio_range: Vec<(f64, f64)>,
    /// `(k5, k6)`: extremes of the quadratic ratio over all τ and directions.
    pub k_quadratic: (f64, f64),
    /// `(k3, k4)`: extremes of the determinant ratio.
    pub k_determinant: (f64, f64),
    /// `(k1, k2)`: smallest and largest eigenvalue of `C₀⁻¹(1)`.
    pub k_dilation: (f64, f64),
    pub det_c0_unit: f64,
    pub directions: usize,
}

pub fn equivalence_constants(
    system: &SystemMatrix,
    tau_grid: &[f64],
    directions: &[DVector<f64>],
) -> Result<EquivalenceReport> {
    if tau_grid.is_empty() || directions.is_empty() {
        return Err(Error::invalid("equivalence constants need a τ grid and directions"));
    }
    if let Some(tau) = tau_grid.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::invalid(format!("τ must lie in (0, 1], got {tau}")));
    }
    let hom = system.homogeneous_part();
    let mut det_ratio = Vec::with_capacity(tau_grid.len());
    let mut ranges = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let c = gramian(system, tau)?;
        let c0 = gramian(&hom, tau)?;
        det_ratio.push((c.logdet() - c0.logdet()).exp());
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for z in directions {
            let ratio = c.quadratic_form(z)? / c0.quadratic_form(z)?;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        ranges.push((lo, hi));
    }
    let c0_unit = gramian(&hom, 1.0)?;
    let eig = symmetric_eigenvalues(c0_unit.matrix());
    let k_dilation = (1.0 / eig.last().expect("non-empty"), 1.0 / eig[0]);
    let fold = |it: &mut dyn Iterator<Item = f64>| it.fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let k_quadratic = (
        ranges.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        ranges.iter().map(|r| r.1).fold(0.0, f64::max),
    );
    let k_determinant = fold(&mut det_ratio.iter().cloned());
    Ok(EquivalenceReport {
        tau_grid: tau_grid.to_vec(),
        det_ratio,
        quadratic_ratio_range: ranges,
        k_quadratic,
        k_determinant,
        k_dilation,
        det_c0_unit: c0_unit.det(),
        directions: directions.len(),
    })
}
