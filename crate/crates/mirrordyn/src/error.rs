//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by geometry, chain, problem, and experiment code.
///
/// Boundary situations that the underlying mathematics leaves undefined
/// (infinite KL divergence, Hessian blow-up at the simplex boundary) are
/// reported as [`MirrorError::Domain`] instead of being encoded as
/// non-finite values, so callers must handle them explicitly.
#[derive(Debug, Error)]
pub enum MirrorError {
    /// Input lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An input contained NaN or infinity.
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    /// A transition-matrix row does not sum to one (or has negative mass).
    #[error("row {row} of transition matrix is not stochastic (sum = {sum})")]
    NonStochasticRow { row: usize, sum: f64 },

    /// The kernel does not admit a unique stationary distribution.
    #[error("kernel is not ergodic: {0}")]
    NonErgodic(String),

    /// I - P + 1 mu^T could not be inverted, or mu is not stationary for P.
    #[error("singular fundamental matrix: {0}")]
    SingularFundamentalMatrix(String),

    /// The tangent-space KKT system could not be solved.
    #[error("singular KKT system")]
    SingularKkt,

    /// The operation needs (x*, f*) but the problem records no optimum.
    #[error("problem records no optimum (x*, f*)")]
    MissingOptimum,

    /// Index past the recorded length.
    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    /// A custom step schedule ran out of entries.
    #[error("custom step schedule exhausted at n = {0}")]
    ScheduleExhausted(usize),

    /// Sample-complexity clauses cannot be satisfied by any finite n.
    #[error("no finite sample complexity: {0}")]
    NoFiniteN(String),

    /// Configuration file is missing, malformed, or fails validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The trajectory was recorded without full iterate storage.
    #[error("operation requires a trajectory recorded with RecordMode::Full")]
    MissingFullRecord,

    /// Filesystem failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, MirrorError>;
