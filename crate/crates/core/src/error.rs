use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot load image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("planning error: {0}")]
    Planning(String),

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {diagnostics}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        diagnostics: String,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
