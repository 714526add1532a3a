use std::path::PathBuf;

use thiserror::Error;

/// Failures reported by segmenter and agent backends.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend timed out after {seconds:.1}s")]
    Timeout { seconds: f64 },
    #[error("backend transport failure after {attempts} attempt(s): {message}")]
    Transport {
        message: String,
        attempts: u32,
        retryable: bool,
    },
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("backend protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },
    #[error("annotation has no {0} scribble pixels")]
    EmptyAnnotation(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("segmenter produced no candidate masks")]
    NoCandidates,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn dimension(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 = configuration, 3 = data, 4 = backend, 1 = anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Dimension { .. }
            | Error::EmptyAnnotation(_)
            | Error::Data(_)
            | Error::Io { .. }
            | Error::Image(_)
            | Error::Json(_)
            | Error::Checkpoint(_) => 3,
            Error::Backend(_) | Error::NoCandidates => 4,
            Error::Invariant(_) | Error::Tensor(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
