use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = QuailError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QuailError {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("unknown category {value:?} in column {column:?}")]
    UnknownCategory { column: String, value: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl QuailError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QuailError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        QuailError::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        QuailError::Shape(msg.into())
    }
}
