use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad shapes, out-of-range hyperparameters, unknown names.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values, failed factorizations, solver breakdowns.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("resource error: {what} needs {needed} bytes but the limit is {limit} bytes")]
    Resource {
        what: String,
        needed: u64,
        limit: u64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors the CLI reports as usage problems (exit code 2).
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Domain(_))
    }
}
