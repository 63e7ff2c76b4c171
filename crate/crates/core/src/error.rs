use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("id mismatch: missing from first set {missing_in_a:?}, missing from second set {missing_in_b:?}")]
    IdMismatch {
        missing_in_a: Vec<String>,
        missing_in_b: Vec<String>,
    },

    #[error("{failed} of {total} images failed; rerun with --skip-bad to drop them")]
    ImagesFailed { failed: usize, total: usize },

    #[error("sample count {n} exceeds the full-MMD cap {cap}; use the block test instead")]
    CapExceeded { n: usize, cap: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
