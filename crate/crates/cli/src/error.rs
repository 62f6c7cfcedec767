use std::path::Path;

use thiserror::Error;

/// Failures mapped to distinct process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Core(ballspin_core::Error),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Schema(_) => 5,
            CliError::Core(_) => 1,
        }
    }
}

impl From<ballspin_core::Error> for CliError {
    fn from(e: ballspin_core::Error) -> Self {
        use ballspin_core::Error as E;
        match e {
            E::InvalidConfig(m) => CliError::Config(m),
            E::Io(e) => CliError::Io(e.to_string()),
            E::Checkpoint(m) => CliError::Schema(m),
            e @ E::ShapeMismatch { .. } => CliError::Schema(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
