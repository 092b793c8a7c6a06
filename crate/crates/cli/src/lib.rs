//! Command implementations behind the `lava` binary.

pub mod commands;
pub mod model_file;

use std::path::Path;

use lava_core::LavaError;
use thiserror::Error;

pub use commands::{run, Cli, Command};
pub use model_file::ModelFile;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Schema(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {err}", path.display()))
    }
}

impl From<LavaError> for CliError {
    fn from(err: LavaError) -> Self {
        let msg = err.to_string();
        match err {
            LavaError::Argument(_) | LavaError::Io { .. } => CliError::Usage(msg),
            LavaError::Schema(_) | LavaError::Parse { .. } => CliError::Schema(msg),
            LavaError::Numeric(_) | LavaError::Diverged { .. } | LavaError::UndefinedMetric(_) => {
                CliError::Numeric(msg)
            }
        }
    }
}
