use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("miscoverage level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("non-finite score at index {index}: {value}")]
    NonFiniteScore { index: usize, value: f64 },
    #[error("invalid sample size: {0}")]
    InvalidN(String),
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("kernel matrix is not positive definite even after jitter {jitter:e}")]
    SingularKernel { jitter: f64 },
    #[error("label {label} is outside the label alphabet of size {k}")]
    UnknownLabel { label: usize, k: usize },
    #[error("label alphabets differ: {left} vs {right} labels")]
    AlphabetMismatch { left: usize, right: usize },
    #[error("probability vector is invalid: {0}")]
    InvalidProbabilities(String),
    #[error("model is not a classifier")]
    NotAClassifier,
    #[error("model is not a score-distribution model")]
    NotAScoreModel,
    #[error("calibration split too small: {part} has {got} points, need at least {needed}")]
    SplitTooSmall { part: &'static str, got: usize, needed: usize },
    #[error("t must lie in (0, 1), got {0}")]
    InvalidT(f64),
    #[error("prediction band is degenerate (infinite threshold)")]
    DegenerateBand,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bin too small: {0}")]
    BinTooSmall(String),
    #[error("score kind {0} is not valid for this operation")]
    WrongScoreKind(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at row {row}, column {column:?}: {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row count mismatch: dataset has {expected} rows, predictions have {got}")]
    RowCountMismatch { expected: usize, got: usize },
    #[error("report config hashes differ: {0} vs {1}")]
    HashMismatch(String, String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// IO error tagged with the path involved.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidAlpha(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::MissingColumn(_)
                | Error::RowCountMismatch { .. }
                | Error::HashMismatch(..)
                | Error::InvalidN(_)
                | Error::Json(_)
        )
    }
}
