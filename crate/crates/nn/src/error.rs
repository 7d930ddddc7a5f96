use thiserror::Error;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value after layer {layer} ({name})")]
    NotFinite { layer: usize, name: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
