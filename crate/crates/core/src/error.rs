use std::io;

use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("codec process error: {message}")]
    CodecProcess { message: String, stderr: String },
    #[error("state error: {0}")]
    State(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("scale error: {0}")]
    Scale(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn codec(msg: impl Into<String>) -> Self {
        Error::CodecProcess {
            message: msg.into(),
            stderr: String::new(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(format!("json: {e}"))
    }
}
