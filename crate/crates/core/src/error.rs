use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("label space of {size} exceeds the enumeration cap of {cap}")]
    Capacity { size: u128, cap: u128 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("operation not supported for this decomposition: {0}")]
    UnsupportedDecomposition(String),

    #[error("numerical underflow: {0}")]
    Underflow(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("line search failed after {trials} trials")]
    LineSearchFailure { trials: usize },

    #[error("solver aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by floating point breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Underflow(_) | Error::Numerical(_) | Error::LineSearchFailure { .. } | Error::Aborted(_))
    }
}
