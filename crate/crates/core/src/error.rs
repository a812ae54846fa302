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

    #[error("tensor contains a non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("bad magic bytes in tensor file {path}")]
    BadMagic { path: PathBuf },

    #[error("tensor file {path} is truncated: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("tensor file {path} declares {declared} elements but carries {actual}")]
    ShapeMismatch {
        path: PathBuf,
        declared: u64,
        actual: u64,
    },

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    Mismatch(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid band specification: {0}")]
    InvalidBand(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid timestep: {0}")]
    InvalidTimestep(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bridge transport error: {0}")]
    Transport(#[source] std::io::Error),

    #[error("bridge protocol error: {0}")]
    Protocol(String),

    #[error("bridge remote error: {0}")]
    Remote(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Transport failures are the only errors a caller may sensibly retry.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }

    pub fn is_bridge(&self) -> bool {
        matches!(
            self,
            Error::Transport(_) | Error::Protocol(_) | Error::Remote(_)
        )
    }
}
