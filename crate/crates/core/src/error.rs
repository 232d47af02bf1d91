//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by estimators, generators, and I/O helpers.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs whose shapes or values violate a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A gradient, objective, or weight came out NaN or infinite. Estimation
    /// treats this as a hard failure rather than a warning.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Every importance weight of a sample underflowed to zero.
    #[error("degenerate importance weights: all log-weights are -inf")]
    DegenerateWeights,

    /// Rejection sampling used up its attempt budget.
    #[error("rejection sampling spent {attempts} draws for {accepted}/{target} accepted samples")]
    RejectionBudget {
        attempts: usize,
        accepted: usize,
        target: usize,
    },

    /// A matrix required to be symmetric positive definite is not.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    /// No edge threshold in the searched range gave a stable density path.
    #[error("no threshold in the searched range keeps path jumpiness within {level}")]
    NoStableThreshold { level: f64 },

    /// A regularization path never gets close enough to a requested density.
    #[error("path never reaches edge density {target:.4} (closest snapshot: {closest:.4})")]
    DensityUnreachable { target: f64, closest: f64 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed numeric field in an input file, with its location.
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for an [`Error::InvalidArgument`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
