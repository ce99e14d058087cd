use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown device id {0}")]
    UnknownDevice(usize),

    #[error("partition does not match score vectors: {0}")]
    PartitionMismatch(String),

    #[error("instance too large for exhaustive search: {0}")]
    InfeasibleSize(String),

    #[error("index {0} is not in the estimated support")]
    NotInSupport(usize),

    #[error("no ratio evidence for component {0}")]
    NoEvidence(usize),

    #[error("missing amplitude for component {0}")]
    MissingAmplitude(usize),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
