use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate signal: ‖x‖ = 0")]
    DegenerateSignal,

    #[error("degenerate observations: mean(y) - ‖b‖²/m = {radicand} is not positive")]
    DegenerateObservations { radicand: f64 },

    #[error("dense matrix of order {order} exceeds the limit of {limit}")]
    ResourceLimit { order: usize, limit: usize },

    #[error("iteration diverged at k = {iteration} (loss = {loss})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure at probe point {index}: {reason}")]
    Numerical { index: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// Process exit status used by the `apr` binary.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Diverged { .. } => 4,
            Error::Numerical { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
