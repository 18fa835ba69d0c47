use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{operand} = {value} is outside the operand range [{min}, {max}]")]
    OperandRange {
        operand: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("hypothesis space of {size} candidates exceeds the cap of {cap}; use known-prefix mode to attack one weight at a time")]
    Capacity { size: u128, cap: u128 },

    #[error(transparent)]
    Correlation(#[from] CorrelationError),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("traces are unusable for CPA: {0}")]
    UnusableForCpa(String),

    #[error(transparent)]
    Fit(#[from] FitError),

    #[error("failed to read weight file {path}: {reason}")]
    WeightFile { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed metadata {path}: {source}")]
    Metadata {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Reasons a Pearson coefficient cannot be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CorrelationError {
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("at least two observations are required, got {0}")]
    TooShort(usize),
    #[error("correlation is undefined: a vector has zero variance")]
    ZeroVariance,
}

/// Trace file decoding failures. Each condition has its own variant so callers
/// can tell a foreign file from a damaged one.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}, expected \"CPAT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported sample dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("file truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("inconsistent dimensions: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("at least {required} points are needed for a decay fit, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("abscissae must be distinct and strictly increasing")]
    UnorderedAbscissae,
    #[error("fit is degenerate: {0}")]
    Degenerate(String),
    #[error("no convergence after {iterations} iterations (last iterate a={a}, b={b}, c={c}, step={step:e})")]
    NoConvergence {
        iterations: usize,
        a: f64,
        b: f64,
        c: f64,
        step: f64,
    },
}
