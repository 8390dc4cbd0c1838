use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up. `axis` names the offending dimension.
    #[error("dimension error on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: String,
        actual: String,
    },

    /// A calling contract was violated (e.g. backward on a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Malformed image or checkpoint payload.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(axis: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            axis,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
