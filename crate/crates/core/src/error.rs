use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed input file. `line` is 1-based; 0 means the problem is not tied to one line.
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    /// The caller violated an operation precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// The data is too degenerate for the requested computation (zero variance, rank deficiency, ...).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// An optimizer produced a non-finite value.
    #[error("training diverged at {location}: {message}")]
    Training { location: String, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn usage(message: impl Into<String>) -> Self {
        Error::Usage(message.into())
    }

    pub(crate) fn degenerate(message: impl Into<String>) -> Self {
        Error::Degenerate(message.into())
    }
}
