//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k = {k} exceeds number of points n = {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("labels are constant; problem is degenerate")]
    ConstantLabels,
    #[error("class {class} missing from {part}")]
    ClassMissing { class: u8, part: &'static str },
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl Error {
    /// Process exit code used by the CLI: 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::KTooLarge { .. }
            | Error::EmptyInput(_)
            | Error::NonFinite(_) => 2,
            Error::ClassMissing { .. } | Error::Data(_) | Error::Io(_) => 3,
            Error::ConstantLabels | Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
