use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unstable filter: {0}")]
    Unstable(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input values or configuration, as
    /// opposed to I/O or malformed files. Well-formed JSON with unknown keys
    /// or wrongly typed values counts as a validation failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Parse { .. } => false,
            Error::Json(e) => e.classify() == serde_json::error::Category::Data,
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
