//! Block structure of the drift matrix, structural validation, and the
//! non-Euclidean translation / dilation calculus attached to it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StructureError};
use crate::linalg::{self, check_dim, matrix_exponential, numerical_rank};

/// Stratification `m0 >= m1 >= ... >= m_nu >= 1` of the state space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self, StructureError> {
        if sizes.is_empty() {
            return Err(StructureError::EmptyBlocks);
        }
        for (i, &m) in sizes.iter().enumerate() {
            let previous = if i == 0 { usize::MAX } else { sizes[i - 1] };
            if m == 0 || m > previous {
                return Err(StructureError::Monotonicity {
                    index: i,
                    value: m,
                    previous: if i == 0 { 0 } else { previous },
                });
            }
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        for &m in &sizes {
            offsets.push(acc);
            acc += m;
        }
        offsets.push(acc);
        Ok(BlockStructure { sizes, offsets })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        *self.offsets.last().expect("offsets never empty")
    }

    /// Number of diffusive coordinates `m0`.
    pub fn m0(&self) -> usize {
        self.sizes[0]
    }

    /// Depth `nu` of the stratification.
    pub fn nu(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    /// Block index of coordinate `i`.
    pub fn block_of(&self, i: usize) -> usize {
        self.offsets[1..].iter().position(|&end| i < end).expect("coordinate in range")
    }

    /// Dilation exponent `2j+1` of each coordinate.
    pub fn exponents(&self) -> Vec<i32> {
        (0..self.dim()).map(|i| 2 * self.block_of(i) as i32 + 1).collect()
    }

    /// Homogeneous dimension `Q = m0 + 3 m1 + ... + (2nu+1) m_nu`.
    pub fn homogeneous_dimension(&self) -> usize {
        self.sizes.iter().enumerate().map(|(j, m)| (2 * j + 1) * m).sum()
    }

    /// Diagonal of `D(r)`.
    pub fn dilation_diagonal(&self, r: f64) -> Result<DVector<f64>> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("dilation factor must be positive, got {r}")));
        }
        Ok(DVector::from_iterator(self.dim(), self.exponents().into_iter().map(|e| r.powi(e))))
    }

    /// `D(r) = diag(r I_{m0}, r^3 I_{m1}, ..., r^{2nu+1} I_{m_nu})`.
    pub fn dilation_matrix(&self, r: f64) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_diagonal(&self.dilation_diagonal(r)?))
    }

    /// Applies `D(r)` to a vector.
    pub fn dilate(&self, r: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.dilation_diagonal(r)?.component_mul(x))
    }
}

impl TryFrom<Vec<usize>> for BlockStructure {
    type Error = StructureError;
    fn try_from(v: Vec<usize>) -> Result<Self, StructureError> {
        BlockStructure::new(v)
    }
}

impl From<BlockStructure> for Vec<usize> {
    fn from(b: BlockStructure) -> Vec<usize> {
        b.sizes
    }
}

pub fn homogeneous_dimension(structure: &BlockStructure) -> usize {
    structure.homogeneous_dimension()
}

pub fn dilation_matrix(structure: &BlockStructure, r: f64) -> Result<DMatrix<f64>> {
    structure.dilation_matrix(r)
}

/// A drift matrix `B` that satisfies the block-form assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    b: DMatrix<f64>,
    structure: BlockStructure,
}

impl SystemMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn dim(&self) -> usize {
        self.structure.dim()
    }

    pub fn m0(&self) -> usize {
        self.structure.m0()
    }

    /// `σ = (I_{m0}; 0)`.
    pub fn sigma(&self) -> DMatrix<f64> {
        linalg::sigma(self.dim(), self.m0())
    }

    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        matrix_exponential(&self.b, t).expect("validated drift matrix is finite")
    }

    /// `e^{tB} x`.
    pub fn flow(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(matrix_exponential(&self.b, t)? * x)
    }

    /// Copy of the system with every `*`-block set to zero, keeping only the
    /// subdiagonal blocks `B_1, ..., B_nu`.
    pub fn homogeneous_part(&self) -> SystemMatrix {
        let s = &self.structure;
        let mut b = DMatrix::zeros(s.dim(), s.dim());
        for j in 1..=s.nu() {
            for r in s.block_range(j) {
                for c in s.block_range(j - 1) {
                    b[(r, c)] = self.b[(r, c)];
                }
            }
        }
        SystemMatrix {
            b,
            structure: s.clone(),
        }
    }

    /// True when all `*`-blocks vanish, i.e. the principal part is dilation-homogeneous.
    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous_part().b == self.b
    }

    /// Builds a system without any validation. Intended for negative tests of
    /// functions that accept raw matrices.
    #[doc(hidden)]
    pub fn new_unchecked(b: DMatrix<f64>, structure: BlockStructure) -> SystemMatrix {
        SystemMatrix { b, structure }
    }
}

/// Checks the block-form assumption and returns the validated system.
pub fn validate_structure(b: DMatrix<f64>, m: &[usize]) -> Result<SystemMatrix, StructureError> {
    let sum: usize = m.iter().sum();
    if m.is_empty() {
        return Err(StructureError::EmptyBlocks);
    }
    if !b.is_square() || b.nrows() != sum {
        return Err(StructureError::Dimension {
            rows: b.nrows(),
            cols: b.ncols(),
            sum,
        });
    }
    let structure = BlockStructure::new(m.to_vec())?;
    for row in 0..sum {
        for col in 0..sum {
            if !b[(row, col)].is_finite() {
                return Err(StructureError::NonFinite { row, col });
            }
        }
    }
    let nb = m.len();
    for i in 0..nb {
        for j in 0..nb {
            if i < j + 2 {
                continue;
            }
            for r in structure.block_range(i) {
                for c in structure.block_range(j) {
                    if b[(r, c)] != 0.0 {
                        return Err(StructureError::ZeroBlock {
                            row_block: i,
                            col_block: j,
                            row: r,
                            col: c,
                            value: b[(r, c)],
                        });
                    }
                }
            }
        }
    }
    for (i, &expected) in m.iter().enumerate().skip(1) {
        let rows = structure.block_range(i);
        let cols = structure.block_range(i - 1);
        let block = b.view((rows.start, cols.start), (rows.len(), cols.len())).clone_owned();
        let rank = numerical_rank(&block);
        if rank != expected {
            return Err(StructureError::RankDeficient {
                index: i,
                rank,
                expected,
            });
        }
    }
    Ok(SystemMatrix { b, structure })
}

/// Rank of `[σ, Bσ, ..., B^{d-1}σ]` for a raw matrix with `m0` diffusive coordinates.
pub fn kalman_rank_of(b: &DMatrix<f64>, m0: usize) -> usize {
    let d = b.nrows();
    let mut block = linalg::sigma(d, m0);
    let mut reach = DMatrix::zeros(d, d * m0);
    for k in 0..d {
        reach.view_mut((0, k * m0), (d, m0)).copy_from(&block);
        block = b * block;
    }
    numerical_rank(&reach)
}

pub fn kalman_rank(system: &SystemMatrix) -> usize {
    kalman_rank_of(system.matrix(), system.m0())
}

/// `B^{(r)} = r^2 D(1/r) B D(r)`: subdiagonal blocks are unchanged and the
/// `*`-block in block position `(i, j)` picks up `r^{2 + 2(j - i)}`.
pub fn scaled_system(system: &SystemMatrix, r: f64) -> Result<SystemMatrix> {
    let s = system.structure();
    let exps = s.exponents();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("scaling factor must be positive, got {r}")));
    }
    let d = s.dim();
    let b = DMatrix::from_fn(d, d, |i, j| {
        let v = system.b[(i, j)];
        if v == 0.0 {
            0.0
        } else {
            v * r.powi(2 - exps[i] + exps[j])
        }
    });
    Ok(SystemMatrix {
        b,
        structure: s.clone(),
    })
}

/// A point `(t, x)` of space-time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: DVector<f64>,
}

impl SpaceTimePoint {
    pub fn new(t: f64, x: DVector<f64>) -> Self {
        SpaceTimePoint { t, x }
    }

    pub fn from_slice(t: f64, x: &[f64]) -> Self {
        SpaceTimePoint {
            t,
            x: DVector::from_column_slice(x),
        }
    }

    pub fn origin(d: usize) -> Self {
        SpaceTimePoint {
            t: 0.0,
            x: DVector::zeros(d),
        }
    }
}

/// Left translation `(τ, ξ) ∘ (t, x) = (t + τ, x + e^{tB} ξ)`.
pub fn group_compose(zeta: &SpaceTimePoint, z: &SpaceTimePoint, system: &SystemMatrix) -> Result<SpaceTimePoint> {
    check_dim(system.dim(), zeta.x.len())?;
    check_dim(system.dim(), z.x.len())?;
    Ok(SpaceTimePoint {
        t: z.t + zeta.t,
        x: &z.x + system.flow(z.t, &zeta.x)?,
    })
}

/// Group inverse: solves `ζ⁻¹ ∘ ζ = (0, 0)` for the spatial part, i.e.
/// `e^{τB} ξ' = -ξ`, by an LU solve.
pub fn group_inverse(zeta: &SpaceTimePoint, system: &SystemMatrix) -> Result<SpaceTimePoint> {
    check_dim(system.dim(), zeta.x.len())?;
    let e = matrix_exponential(system.matrix(), zeta.t)?;
    let rhs = -&zeta.x;
    let xi = e
        .lu()
        .solve(&rhs)
        .ok_or(Error::NonFinite("singular matrix exponential"))?;
    Ok(SpaceTimePoint { t: -zeta.t, x: xi })
}

/// Anisotropic dilation `δ_r(t, x) = (r² t, D(r) x)`.
pub fn dilate_point(structure: &BlockStructure, r: f64, z: &SpaceTimePoint) -> Result<SpaceTimePoint> {
    Ok(SpaceTimePoint {
        t: r * r * z.t,
        x: structure.dilate(r, &z.x)?,
    })
}
