use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LavaError>;

#[derive(Debug, Error)]
pub enum LavaError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("free-run simulation diverged at sample {sample}")]
    Diverged { sample: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LavaError {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        LavaError::Argument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        LavaError::Numeric(msg.into())
    }

    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        LavaError::Schema(msg.into())
    }
}
