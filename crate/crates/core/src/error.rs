use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = D2nnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum D2nnError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: expected {expected}, found {found}")]
    GridMismatch { expected: String, found: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("non-finite gradient in {location}")]
    NonFiniteGradient { location: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl D2nnError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        D2nnError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        D2nnError::Io {
            path: path.into(),
            source,
        }
    }
}
