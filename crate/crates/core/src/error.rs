use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = IcadError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IcadError {
    /// Input too short for the requested preparation (e.g. patch longer than series).
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Malformed or non-finite data values.
    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller broke an operation's precondition (mixed modalities, empty reference set, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IcadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IcadError::Io {
            path: path.into(),
            source,
        }
    }
}
