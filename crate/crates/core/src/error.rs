use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: duplicate sample id {id:?} at row {row}")]
    DuplicateSampleId { path: PathBuf, id: String, row: usize },
    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-numeric value {value:?} at row {row}, column {col}")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        col: usize,
        value: String,
    },
    #[error("{path}: negative time {value} at row {row}")]
    NegativeTime { path: PathBuf, row: usize, value: f64 },
    #[error("{path}: event must be 0 or 1, found {value:?} at row {row}")]
    InvalidEvent { path: PathBuf, row: usize, value: String },
    #[error("empty intersection of sample ids across inputs")]
    EmptyIntersection,
    #[error("too few samples: {found} (need at least {required})")]
    TooFewSamples { found: usize, required: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("kernel is not positive semi-definite: smallest eigenvalue {smallest:e}, largest {largest:e}")]
    NotPsd { smallest: f64, largest: f64 },
    #[error("eigenvalue {index} is zero; requested dimension exceeds the effective rank")]
    ZeroEigenvalue { index: usize },
    #[error("survival data: {0}")]
    Survival(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("failed to write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Stage { source, .. } => source.kind(),
            Error::InvalidArgument(_) => ErrorKind::Config,
            Error::NonFinite(_) | Error::NotPsd { .. } | Error::ZeroEigenvalue { .. } | Error::DimensionMismatch(_) => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn at_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
