//! Error types shared across the library.

use thiserror::Error;

/// Errors raised by detection, channel generation, coding, and the
/// simulation harness.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// A matrix/vector dimension did not match its peer.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A channel column has zero norm, so the Gram diagonal cannot be
    /// inverted for that user.
    #[error("degenerate user channel: column {user} has zero norm")]
    DegenerateChannel { user: usize },

    /// A detector iterate became non-finite.
    #[error("numerical divergence at iteration {iteration}")]
    NumericalDivergence { iteration: usize },

    /// The regularized Gram system could not be factorized.
    #[error("singular system: Gram matrix is not positive definite")]
    SingularSystem,

    /// A parameter was outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// LLR frame length inconsistent with the code configuration.
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
