use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command layer, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("cannot read config {path}: {reason}")]
    ConfigFile { path: PathBuf, reason: String },

    #[error("missing input files:\n  - {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n  - "))]
    MissingInputs(Vec<PathBuf>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] cumolos_core::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        CliError::Malformed {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// 2 for configuration problems, 4 for numeric aborts, 3 for everything
    /// else that stems from inputs or outputs.
    pub fn exit_code(&self) -> i32 {
        use cumolos_core::Error as E;
        match self {
            CliError::Config(_) | CliError::ConfigFile { .. } => 2,
            CliError::Core(E::Parameter(_)) => 2,
            CliError::Core(E::NonFiniteLoss { .. } | E::Numeric(_)) => 4,
            _ => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
