use thiserror::Error;

/// Errors raised across the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    NotPsd {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no beam-list region matches pose (nearest heading mismatch {heading_mismatch_deg:.1} deg)")]
    LookupMiss { heading_mismatch_deg: f64 },
    #[error("configuration error: {0}")]
    Validation(String),
    #[error("unsupported artifact format: {0}")]
    Version(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
