//! Dense linear-algebra helpers: matrix exponential, numerical rank and
//! small symmetric utilities.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value threshold used for every numerical rank decision.
pub const RANK_TOLERANCE: f64 = 1e-10;

// Diagonal Padé coefficients b_0..b_m for m = 3, 5, 7, 9, 13 and the 1-norm
// bounds below which each degree meets double-precision backward error.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.53939833006323e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut odd = &ident * b[1];
    let mut even = &ident * b[0];
    let mut power = ident.clone();
    let mut k = 1;
    while 2 * k < b.len() {
        power = &power * &a2;
        even += &power * b[2 * k];
        if 2 * k + 1 < b.len() {
            odd += &power * b[2 * k + 1];
        }
        k += 1;
    }
    (a * odd, even)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &PADE13;
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = a * inner_u;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    (u, v)
}

/// e^{tB} by scaling and squaring with a diagonal Padé approximant.
///
/// The Padé degree and the number of squarings are picked from the 1-norm
/// of `tB`.
pub fn matrix_exponential(b: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !b.is_square() {
        return Err(Error::invalid("matrix exponential needs a square matrix"));
    }
    if !t.is_finite() || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential input"));
    }
    let n = b.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let a = b * t;
    let norm = norm1(&a);
    let low: [&[f64]; 4] = [&PADE3, &PADE5, &PADE7, &PADE9];
    let (u, v, squarings) = match THETA[..4].iter().position(|&theta| norm <= theta) {
        Some(i) => {
            let (u, v) = pade_low(&a, low[i]);
            (u, v, 0)
        }
        None => {
            let s = (norm / THETA[4]).log2().ceil().max(0.0) as i32;
            let scaled = &a / 2f64.powi(s);
            let (u, v) = pade13(&scaled);
            (u, v, s)
        }
    };
    let denom = &v - &u;
    let numer = &v + &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .ok_or(Error::NonFinite("Padé denominator is singular"))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential result"));
    }
    Ok(result)
}

/// Number of singular values above `RANK_TOLERANCE` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * largest).count()
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = symmetrize(m);
    let mut values: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().cloned().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    values
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// The (d × m0) matrix σ = (I_{m0}; 0).
pub fn sigma(d: usize, m0: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, m0, |i, j| if i == j { 1.0 } else { 0.0 })
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
