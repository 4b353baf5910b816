use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel family mismatch: {0}")]
    FamilyMismatch(String),

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("incompatible sketch: {0}")]
    IncompatibleSketch(String),

    #[error("empty sketch: no samples accumulated")]
    EmptySketch,

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
