use std::path::PathBuf;

use crate::grammar::InvalidReason;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid plate text {text:?}: {reason}")]
    InvalidPlate { text: String, reason: InvalidReason },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("step {step} outside 1..={max}")]
    StepOutOfRange { step: usize, max: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("matrix is not positive semi-definite (eigenvalue {0})")]
    NotPsd(f64),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("dangling reference in manifest: {0}")]
    Dangling(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures rooted in numerics rather than bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::NotPsd(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
