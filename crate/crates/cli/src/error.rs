use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tpsurf_core::Error),

    #[error("cannot read {path}: {source}")]
    Input { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Usage(String),

    #[error("report serialization failed: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit code: 2 for unreadable or malformed input, 3 for violated
    /// preconditions and invalid arguments, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        use tpsurf_core::Error as E;
        match self {
            CliError::Input { .. } => 2,
            CliError::Core(E::Parse { .. } | E::Io(_) | E::DegenerateSimplices { .. }) => 2,
            CliError::Core(_) | CliError::Usage(_) => 3,
            CliError::Output { .. } | CliError::Json(_) | CliError::Csv(_) => 1,
        }
    }
}

/// Exit code for a verification run with failed criteria.
pub const CRITERION_FAILURE: i32 = 4;
