use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid feature vector: {0}")]
    InvalidFeature(String),

    #[error("bit length {0} is not a positive multiple of 64")]
    InvalidBitLength(usize),

    #[error("signatures from different hashers ({left:#018x} vs {right:#018x})")]
    IncomparableSignatures { left: u64, right: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index needs at least 2 entries, got {0}")]
    IndexTooSmall(usize),

    #[error("duplicate place id {0}")]
    DuplicatePlaceId(u64),

    #[error("record {0} has no class probabilities")]
    MissingClassProbabilities(u64),

    #[error("query frame {0} appears twice in the ground truth")]
    DuplicateGroundTruth(u64),

    #[error("tolerance {0} is outside 1..=5 frames")]
    InvalidTolerance(u32),

    #[error("no ground truth for query frame {0}")]
    MissingGroundTruth(u64),

    #[error("threshold {0} is outside its valid range")]
    InvalidThreshold(f64),

    #[error("no queries")]
    NoQueries,

    #[error("reports are not comparable: {0}")]
    IncomparableReports(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error families; the CLI maps each onto its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Format,
    Dimension,
    Incomparable,
    GroundTruth,
    Other,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Format(_) | Error::InvalidFeature(_) | Error::Json(_) | Error::DuplicatePlaceId(_) => {
                ErrorKind::Format
            }
            Error::DimensionMismatch { .. } | Error::MissingClassProbabilities(_) => ErrorKind::Dimension,
            Error::IncomparableSignatures { .. } | Error::IncomparableReports(_) => ErrorKind::Incomparable,
            Error::DuplicateGroundTruth(_)
            | Error::InvalidTolerance(_)
            | Error::MissingGroundTruth(_)
            | Error::Csv(_) => ErrorKind::GroundTruth,
            _ => ErrorKind::Other,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn dims(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }
}
