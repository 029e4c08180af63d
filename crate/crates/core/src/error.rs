use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter, shape or index is outside what the component accepts.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A file did not match its declared binary or text layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
