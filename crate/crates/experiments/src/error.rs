use std::path::PathBuf;

use ftn_core::data::DataError;
use ftn_core::nn::NnError;
use thiserror::Error;

/// Failure of an experiment run. Each variant maps to a process exit code.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("diverged at {at}: {msg} (parameter snapshot in {})", snapshot.display())]
    Divergence { at: String, msg: String, snapshot: PathBuf },
    #[error("analysis: {0}")]
    Analysis(String),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Other(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Data(_) => 3,
            RunError::Divergence { .. } => 4,
            RunError::Analysis(_) => 5,
            _ => 1,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        RunError::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = RunError> = std::result::Result<T, E>;
