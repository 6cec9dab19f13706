use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Data that violates a type invariant (non-finite values, too-short videos).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Arguments that do not fit together (shape mismatch, out-of-range k).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Binary file that does not follow its declared layout.
    #[error("{path}: format error at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Text file with a malformed record.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Training produced a non-finite loss.
    #[error("non-finite loss {value} at iteration {iteration} (video {video_id})")]
    NonFinite {
        iteration: usize,
        video_id: String,
        value: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: &str, expected: impl std::fmt::Display, got: impl std::fmt::Display) -> Self {
        Error::InvalidArgument(format!("{what}: expected {expected}, got {got}"))
    }
}
