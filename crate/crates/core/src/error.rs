use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ink sequence has no usable points or segments")]
    EmptyInk,
    #[error("degenerate ink: x-axis deviation {0:e} is below the normalization floor")]
    DegenerateInk(f64),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("label {label} outside [0, {classes})")]
    Label { label: usize, classes: usize },
    #[error("malformed token sequence: {0}")]
    Token(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: non-finite coordinate")]
    Value { path: PathBuf, line: usize },
    #[error("configuration mismatch: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
