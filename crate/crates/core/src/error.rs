use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter file line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("parameter table incomplete: missing entry for triplet {0}")]
    Incomplete(String),

    #[error("invalid parameter `{field}` for triplet {triplet}: {message}")]
    Validation {
        field: &'static str,
        triplet: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite {stage} for pair ({i}, {j})")]
    NonFinite {
        i: usize,
        j: usize,
        stage: &'static str,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors raised by force evaluation rather than by input handling.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
