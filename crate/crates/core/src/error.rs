use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum GalError {
    #[error("empty vector")]
    EmptyVector,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite {0}")]
    NonFinite(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndexOutOfRange { index: usize, classes: usize },

    #[error("forward cache does not match the model: {0}")]
    StaleCache(String),

    #[error("zero variance")]
    ZeroVariance,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GalError>;
