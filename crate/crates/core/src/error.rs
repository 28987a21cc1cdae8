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

    #[error("{path}:{line}: malformed JSON: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: invalid record: {message}")]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Precondition(String),

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("unexpected payload from {endpoint}: {message}")]
    Payload { endpoint: String, message: String },

    #[error("generator failed on instance {instance}: {source}")]
    Generator {
        instance: String,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
