use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical quantity outside its admissible domain (non-positive density, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("numeric divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("NaN encountered: {0}")]
    NotFinite(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Network(#[from] ussi_nn::NnError),

    #[error("sample {id}: {source}")]
    Sample {
        id: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn for_sample(self, id: u64) -> Self {
        Error::Sample {
            id,
            source: Box::new(self),
        }
    }

    /// Coarse category used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Domain(_) | Error::Config(_) | Error::Argument(_) | Error::Bounds(_) => {
                ErrorCategory::Config
            }
            Error::Divergence { .. } | Error::NotFinite(_) => ErrorCategory::Numeric,
            Error::Schema(_) | Error::Format(_) => ErrorCategory::Format,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Sample { source, .. } => source.category(),
            Error::Network(e) => match e {
                ussi_nn::NnError::NotFinite { .. } => ErrorCategory::Numeric,
                ussi_nn::NnError::Format(_) => ErrorCategory::Format,
                ussi_nn::NnError::Io(_) => ErrorCategory::Io,
                _ => ErrorCategory::Config,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Format,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 3,
            ErrorCategory::Io => 4,
            ErrorCategory::Format => 5,
            ErrorCategory::Numeric => 6,
        }
    }
}
