use std::path::Path;

use thiserror::Error;

/// Command failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing input {path}: {reason}")]
    MissingInput { path: String, reason: String },

    #[error(transparent)]
    Core(#[from] forgetmi::Error),

    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn missing(path: &Path, reason: impl ToString) -> Self {
        CliError::MissingInput {
            path: path.display().to_string(),
            reason: reason.to_string(),
        }
    }

    pub fn write(path: &Path, source: std::io::Error) -> Self {
        CliError::Write {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for bad configs, bad inputs and validation failures; 3 for numeric
    /// failures; 1 when an output cannot be written.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(forgetmi::Error::Numeric(_)) => 3,
            CliError::Write { .. } => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
