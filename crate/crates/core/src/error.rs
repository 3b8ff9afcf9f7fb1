use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate box [{x1}, {y1}, {x2}, {y2}]")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{path}:{line}: schema error: {message}")]
    Schema { path: PathBuf, line: usize, message: String },

    #[error("cannot resolve {what} at {path}")]
    Resolution { what: String, path: PathBuf },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("numerical abort: {0}")]
    NumericalAbort(String),

    #[error("missing input for stage `{stage}`: {path} (produced by stage `{producer}`)")]
    MissingStageInput { stage: String, producer: String, path: PathBuf },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by malformed inputs or configuration rather
    /// than by computation.
    pub fn is_schema_or_config(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Schema { .. }
                | Error::Resolution { .. }
                | Error::Config(_)
                | Error::MissingStageInput { .. }
                | Error::InvalidArgument(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
