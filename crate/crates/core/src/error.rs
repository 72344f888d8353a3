use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported stream count {0} (expected 2)")]
    StreamCount(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid value for {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    SampleRate { expected: u32, got: u32 },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("sequence too short: {0}")]
    TooShort(String),
    #[error("format error in field `{field}`: {reason}")]
    Format { field: String, reason: String },
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
    #[error("non-finite loss term `{0}`")]
    NonFiniteLoss(String),
    #[error("missing component: {0}")]
    Missing(String),
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
