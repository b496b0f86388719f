use thiserror::Error;

/// Rejection of a drift matrix / block structure pair.
///
/// Every variant carries a stable clause identifier (see [`StructureError::clause`])
/// so that callers can report the violated condition in machine-readable form.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StructureError {
    #[error("block structure is empty")]
    EmptyBlocks,
    #[error("drift matrix is {rows}x{cols} but block sizes sum to {sum}")]
    Dimension { rows: usize, cols: usize, sum: usize },
    #[error("block sizes must be positive and non-increasing: m[{index}] = {value} after {previous}")]
    Monotonicity {
        index: usize,
        value: usize,
        previous: usize,
    },
    #[error("drift matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("block ({row_block}, {col_block}) must vanish but entry ({row}, {col}) = {value}")]
    ZeroBlock {
        row_block: usize,
        col_block: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("subdiagonal block B_{index} has numerical rank {rank}, expected {expected}")]
    RankDeficient {
        index: usize,
        rank: usize,
        expected: usize,
    },
}

impl StructureError {
    pub fn clause(&self) -> &'static str {
        match self {
            StructureError::EmptyBlocks | StructureError::Dimension { .. } => "dimension",
            StructureError::Monotonicity { .. } => "m-monotonicity",
            StructureError::NonFinite { .. } => "non-finite",
            StructureError::ZeroBlock { .. } => "zero-block",
            StructureError::RankDeficient { .. } => "subdiagonal-rank",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("coefficient check failed ({clause}): {message}")]
    Coefficient {
        clause: &'static str,
        message: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("Gramian over horizon {horizon} is not positive definite")]
    SingularGramian { horizon: f64 },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    /// Machine-readable identifier of the violated clause for validation failures.
    pub fn clause(&self) -> Option<&'static str> {
        match self {
            Error::Structure(e) => Some(e.clause()),
            Error::Coefficient { clause, .. } => Some(clause),
            _ => None,
        }
    }

    pub fn is_validation(&self) -> bool {
        self.clause().is_some()
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
