use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: u8, classes: usize },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("data corruption: {0}")]
    DataCorruption(String),

    /// Input carries too little structure for the requested operation
    /// (for example a label map with a single class handed to the mixer).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
