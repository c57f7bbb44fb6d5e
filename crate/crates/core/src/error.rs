use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file header or body violated its format; `field` names the offending part.
    #[error("format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("length mismatch: expected {expected} values, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: expected {expected}, found {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("prior value {value} at flat index {index} is outside [0, 1]")]
    PriorOutOfRange { index: usize, value: f64 },

    #[error("empty support mask")]
    EmptySupportMask,

    #[error("prototype is the zero vector")]
    ZeroPrototype,

    #[error("k exceeds pixel count (k = {k}, pixels = {n})")]
    KExceedsPixelCount { k: usize, n: usize },

    #[error("contraction condition violated: alpha/(delta+epsilon)^2 = {bound} >= 1")]
    ContractionViolated { bound: f64 },

    #[error("dense oracle refused: {n} pixels exceeds the limit of {limit}")]
    OracleLimit { n: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            field,
            detail: detail.into(),
        }
    }
}
