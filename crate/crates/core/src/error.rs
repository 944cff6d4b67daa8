use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("design did not converge: criterion {criterion} exceeds {bound} after {iterations} iterations")]
    DesignNotConverged {
        criterion: f64,
        bound: f64,
        iterations: usize,
    },

    #[error("hypothesis violated at index {index}: {reason}")]
    HypothesisViolated { index: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 1 for bad input or configuration, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 1,
            Error::NonFinite(_)
            | Error::NotPositiveDefinite
            | Error::DesignNotConverged { .. }
            | Error::HypothesisViolated { .. }
            | Error::Numerical(_) => 2,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
