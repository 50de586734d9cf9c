use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration. `field` names the offending key.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed trace row. `line` is 1-based and counts the header.
    #[error("{path}:{line}: {message}")]
    TraceRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("predictor is not trained")]
    Untrained,

    #[error("training failed: {0}")]
    Training(String),

    /// Engine bookkeeping went out of sync (e.g. completion for an unknown request).
    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
