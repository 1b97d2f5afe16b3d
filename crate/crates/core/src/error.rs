use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range for {len} snapshots")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("factorization breakdown at step {step}: Schur complement {value:e}")]
    Breakdown { step: usize, value: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("reconstruction error is undefined: every snapshot column is zero")]
    UndefinedMetric,

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("dimension overflow: {rows} x {cols} does not fit in memory")]
    DimensionOverflow { rows: u64, cols: u64 },

    #[error("unexpected {0} trailing bytes after payload")]
    TrailingData(u64),

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
