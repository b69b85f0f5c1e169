//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("signal too short for receptive field: need at least {required}, got {got}")]
    SignalTooShort { required: usize, got: usize },

    #[error("loss node must be a scalar, got length {0}")]
    NonScalarLoss(usize),

    #[error("unknown parameter block `{0}`")]
    UnknownBlock(String),

    #[error("parameter block `{0}` already exists")]
    DuplicateBlock(String),

    #[error("missing gradient for block `{0}`")]
    MissingGradient(String),

    #[error("parameters were updated after the tape was recorded; re-record before backward")]
    StaleTape,

    #[error("{path}: row {row}: {message}")]
    CsvRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("constant series `{0}` has no min-max scaler")]
    ConstantSeries(String),

    #[error("split boundary {boundary} outside series range [{first}, {last}]")]
    BoundaryOutOfRange {
        boundary: i64,
        first: i64,
        last: i64,
    },

    #[error("frame `{farm_id}` too short: need at least {required} points, got {got}")]
    FrameTooShort {
        farm_id: String,
        required: usize,
        got: usize,
    },

    #[error("singular least-squares system for order {order}; try a smaller order")]
    SingularSystem { order: usize },

    #[error("replay buffer holds {have} transitions, need at least {need} to sample")]
    BufferWarmup { have: usize, need: usize },

    #[error("misaligned stream for farm `{farm_id}` at index {index}: {message}")]
    MisalignedStream {
        farm_id: String,
        index: usize,
        message: String,
    },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
