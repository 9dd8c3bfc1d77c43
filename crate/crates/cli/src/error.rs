use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] wellplan::Error),
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(&'static str),
    #[error("missing artifact {}; run the earlier stage first", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{}: malformed artifact: {msg}", path.display())]
    Artifact { path: PathBuf, msg: String },
    #[error("run directory {} is locked by another run", .0.display())]
    Locked(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn artifact(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        CliError::Artifact { path: path.into(), msg: msg.to_string() }
    }
}

/// Process exit status of a finished command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Warnings = 1,
    InputError = 2,
}

impl ExitStatus {
    pub fn from_warnings(warnings: &[String]) -> Self {
        if warnings.is_empty() {
            ExitStatus::Success
        } else {
            ExitStatus::Warnings
        }
    }
}
