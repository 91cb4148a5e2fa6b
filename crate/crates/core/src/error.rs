//! Error type shared across the pipeline.

use thiserror::Error;

/// Errors produced by ingestion, preprocessing, training, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row in {path} (line {line}): {message}")]
    MalformedRow {
        path: String,
        line: u64,
        message: String,
    },

    #[error("bad header in {path}: {message}")]
    BadHeader { path: String, message: String },

    #[error("duplicate key in {path}: {key}")]
    DuplicateKey { path: String, key: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at {context} (iteration {iteration})")]
    NonFinite { context: String, iteration: usize },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: &str, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
