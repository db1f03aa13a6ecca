use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid subgradient certificate: {0}")]
    InvalidSubgradient(String),

    #[error("operation requires a linear operator")]
    NotLinear,

    #[error("source condition violated: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    SourceConditionViolated { residual: f64, tolerance: f64 },

    #[error("bound not applicable: {0}")]
    BoundInapplicable(String),

    #[error("problem generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("insufficient data for rate fit: {valid} valid rows, need at least {required}")]
    InsufficientData { valid: usize, required: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed matrix file: {0}")]
    MatrixParse(String),
}
