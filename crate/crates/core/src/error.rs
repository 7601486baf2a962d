use thiserror::Error;

/// Errors raised by the SVL library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A filter recursion produced a non-positive innovation variance or a
    /// state variance below the rounding tolerance.
    #[error("filter breakdown at t={t}: variance {variance:e}")]
    FilterBreakdown { t: usize, variance: f64 },

    /// Every sweep of a run failed numerically, so no usable draws exist.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("autocorrelation undefined for a constant series")]
    ConstantSeries,

    #[error("series too short: need at least {min} values, got {len}")]
    TooShort { len: usize, min: usize },

    #[error("malformed data at row {row}, column {column}: {message}")]
    Malformed {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("malformed grid spec at line {line}: {message}")]
    GridSpec { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
