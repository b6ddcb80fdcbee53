//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on caller-supplied data was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A CSV row failed validation; `row` is the 1-based data row number.
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    /// A serialized document does not match the expected schema.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// A patient does not have enough history for the requested operation.
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    /// Coefficients diverged during fitting, which indicates (quasi-)separated
    /// training data. Increase the ridge penalty or provide more varied data.
    #[error("perfect separation detected (coefficient norm exceeded {0}); increase the ridge penalty")]
    PerfectSeparation(f64),

    /// The observed-information matrix could not be factorized.
    #[error("singular information matrix")]
    SingularInformation,

    /// A numerical invariant failed mid-computation.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The exhaustive solver refused an instance larger than its search guard.
    #[error("instance too large for exhaustive search: {0}; use the greedy policy instead")]
    InstanceTooLarge(String),

    /// An internal consistency check failed; this signals a bug, not bad input.
    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
