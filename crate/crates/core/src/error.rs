use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e} below -{threshold:e})")]
    NotPsd { eigenvalue: f64, threshold: f64 },

    #[error("shape mismatch: {0}")]
    InvalidShape(String),

    #[error("reference Gramian is degenerate: {0}")]
    DegenerateReference(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("point outside the dictionary domain: {0}")]
    DomainError(String),

    #[error("sampling density is degenerate: {0}")]
    DegenerateDensity(String),

    #[error("numerical error: {0}")]
    NumericalError(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
