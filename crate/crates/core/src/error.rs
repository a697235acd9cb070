use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenexError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index {index} out of range for {what} of size {size}")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("empty attention row {row}")]
    EmptyAttentionRow { row: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl GenexError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GenexError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from numeric failure rather than bad data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, GenexError::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, GenexError>;
