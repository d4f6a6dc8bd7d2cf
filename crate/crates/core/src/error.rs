//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error for style type '{style_type}': {message}")]
    Schema { style_type: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical error in {context}: {message}")]
    Numerical { context: String, message: String },

    #[error("invalid request: {0}")]
    Request(String),

    #[error("checkpoint version {found} is incompatible with supported version {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("training aborted at step {step}: non-finite value in loss term '{term}'")]
    NonFiniteLoss { step: u64, term: String },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn numerical(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            message: message.into(),
        }
    }
}
