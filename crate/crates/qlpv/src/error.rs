use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("closed loop stopped at step {step}: controller QP ended with status {status}")]
    ControllerFailed { step: usize, status: String },
    #[error(transparent)]
    Core(#[from] qlpv_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        CliError::Format { path: path.into(), msg: msg.to_string() }
    }

    /// 2 infeasibility, 3 I/O and file formats, 4 configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(qlpv_core::Error::Infeasible(_)) | CliError::ControllerFailed { .. } => 2,
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Format { .. } | CliError::Exists(_) => 3,
            CliError::Config(_) => 4,
            CliError::Core(_) => 1,
        }
    }
}
