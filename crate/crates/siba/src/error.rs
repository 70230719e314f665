use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum SibaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("backend error: {0}")]
    Backend(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, SibaError>;

impl SibaError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SibaError::InvalidInput(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        SibaError::ShapeMismatch(msg.into())
    }
}
