//! Numerical integration: adaptive Simpson for matrix-valued integrands and
//! composite Gauss–Legendre rules on boxes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::max_abs;

/// Tolerances for [`adaptive_simpson`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpsonTolerance {
    pub relative: f64,
    pub absolute: f64,
    pub max_depth: u32,
}

impl Default for SimpsonTolerance {
    fn default() -> Self {
        SimpsonTolerance {
            relative: 1e-10,
            absolute: 1e-14,
            max_depth: 40,
        }
    }
}

struct Panel {
    a: f64,
    b: f64,
    fa: DMatrix<f64>,
    fm: DMatrix<f64>,
    fb: DMatrix<f64>,
    whole: DMatrix<f64>,
}

fn simpson(a: f64, b: f64, fa: &DMatrix<f64>, fm: &DMatrix<f64>, fb: &DMatrix<f64>) -> DMatrix<f64> {
    (fa + fm * 4.0 + fb) * ((b - a) / 6.0)
}

/// Adaptive Simpson quadrature of a matrix-valued function on `[a, b]`.
///
/// The error target is `max(absolute, relative * |I|)` in the max-entry norm,
/// where `|I|` comes from a coarse first pass over eight panels.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: SimpsonTolerance) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> Result<DMatrix<f64>>,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::NonFinite("integration bounds"));
    }
    if a == b {
        let f0 = f(a)?;
        return Ok(DMatrix::zeros(f0.nrows(), f0.ncols()));
    }
    // Seed with eight panels so that oscillating integrands are not
    // accepted from a single lucky three-point estimate.
    const SEED: usize = 8;
    let h = (b - a) / SEED as f64;
    let mut panels = Vec::with_capacity(SEED);
    let mut scale = 0.0;
    let mut left = f(a)?;
    for k in 0..SEED {
        let pa = a + h * k as f64;
        let pb = if k + 1 == SEED { b } else { a + h * (k + 1) as f64 };
        let fm = f(0.5 * (pa + pb))?;
        let fb = f(pb)?;
        let whole = simpson(pa, pb, &left, &fm, &fb);
        panels.push(Panel {
            a: pa,
            b: pb,
            fa: left,
            fm,
            fb: fb.clone(),
            whole,
        });
        left = fb;
    }
    for p in &panels {
        scale += max_abs(&p.whole);
    }
    let target = tol.absolute.max(tol.relative * scale);
    let mut total: Option<DMatrix<f64>> = None;
    for p in panels {
        let part = refine(&f, p, target / SEED as f64, tol.max_depth)?;
        total = Some(match total {
            None => part,
            Some(acc) => acc + part,
        });
    }
    let total = total.expect("at least one panel");
    if total.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quadrature result"));
    }
    Ok(total)
}

fn refine<F>(f: &F, p: Panel, tol: f64, depth: u32) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> Result<DMatrix<f64>>,
{
    let m = 0.5 * (p.a + p.b);
    let flm = f(0.5 * (p.a + m))?;
    let frm = f(0.5 * (m + p.b))?;
    let left = simpson(p.a, m, &p.fa, &flm, &p.fm);
    let right = simpson(m, p.b, &p.fm, &frm, &p.fb);
    let both = &left + &right;
    let err = max_abs(&(&both - &p.whole));
    if err <= 15.0 * tol {
        return Ok(&both + (&both - &p.whole) / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive Simpson exhausted its depth on [{}, {}] (error estimate {err:e})",
            p.a, p.b
        )));
    }
    let lp = Panel {
        a: p.a,
        b: m,
        fa: p.fa,
        fm: flm,
        fb: p.fm.clone(),
        whole: left,
    };
    let rp = Panel {
        a: m,
        b: p.b,
        fa: p.fm,
        fm: frm,
        fb: p.fb,
        whole: right,
    };
    Ok(refine(f, lp, 0.5 * tol, depth - 1)? + refine(f, rp, 0.5 * tol, depth - 1)?)
}

/// Scalar convenience wrapper around [`adaptive_simpson`].
pub fn adaptive_simpson_scalar<F>(f: F, a: f64, b: f64, tol: SimpsonTolerance) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let m = adaptive_simpson(|s| Ok(DMatrix::from_element(1, 1, f(s)?)), a, b, tol)?;
    Ok(m[(0, 0)])
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule over the symmetric box `[-half_width, half_width]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss–Legendre points per panel.
    pub nodes: usize,
    /// Panels per axis.
    pub panels: usize,
    /// Half-width of the box, in standard deviations of the whitened integrand.
    pub half_width: f64,
    /// Relative agreement required between the rule and its refinement.
    pub tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            nodes: 16,
            panels: 8,
            half_width: 8.0,
            tolerance: 1e-9,
        }
    }
}

impl QuadratureSpec {
    pub fn refined(&self) -> QuadratureSpec {
        QuadratureSpec {
            panels: self.panels * 2,
            ..*self
        }
    }

    /// One-dimensional nodes and weights of the composite rule.
    pub fn axis_rule(&self) -> (Vec<f64>, Vec<f64>) {
        let (gx, gw) = gauss_legendre(self.nodes);
        let width = 2.0 * self.half_width / self.panels as f64;
        let mut xs = Vec::with_capacity(self.nodes * self.panels);
        let mut ws = Vec::with_capacity(self.nodes * self.panels);
        for p in 0..self.panels {
            let lo = -self.half_width + width * p as f64;
            for (x, w) in gx.iter().zip(&gw) {
                xs.push(lo + 0.5 * width * (x + 1.0));
                ws.push(0.5 * width * w);
            }
        }
        (xs, ws)
    }

    /// Integrates `f` over the box in `dim` dimensions with the tensor rule.
    pub fn integrate<F>(&self, dim: usize, mut f: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        if self.nodes == 0 || self.panels == 0 || !(self.half_width > 0.0) {
            return Err(Error::invalid("quadrature rule needs nodes, panels and a positive width"));
        }
        let (xs, ws) = self.axis_rule();
        let n = xs.len();
        let mut idx = vec![0usize; dim];
        let mut point = vec![0.0; dim];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for k in 0..dim {
                point[k] = xs[idx[k]];
                w *= ws[idx[k]];
            }
            total += w * f(&point)?;
            let mut k = 0;
            loop {
                if k == dim {
                    return Ok(total);
                }
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Integrates with this rule and with the panel-doubled rule; errors when
    /// they disagree beyond `tolerance` (relative, floored at 1e-300).
    pub fn integrate_checked<F>(&self, dim: usize, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let coarse = self.integrate(dim, &f)?;
        let fine = self.refined().integrate(dim, &f)?;
        let gap = (fine - coarse).abs();
        if gap > self.tolerance * fine.abs().max(1e-300) && gap > 1e-300 {
            return Err(Error::Quadrature(format!(
                "box rule changed by {gap:e} under refinement (value {fine:e})"
            )));
        }
        Ok(fine)
    }
}
