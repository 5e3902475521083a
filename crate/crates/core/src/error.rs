use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed at line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Every class-aware discrepancy term had an empty indicator set.
    #[error("discrepancy undefined: no class pairs present in any term")]
    UndefinedDiscrepancy,

    #[error("adaptation error: {0}")]
    Adaptation(String),

    /// Confidence filtering removed every target example.
    #[error("no target example reached confidence threshold tau = {tau}; lower tau and retry")]
    EmptyPseudoLabels { tau: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
