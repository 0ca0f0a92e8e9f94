use thiserror::Error;

/// Errors raised by the numerical laboratory.
///
/// Variants are split so callers can tell a rejected input (the caller asked
/// for something outside an operation's preconditions) from a numerical
/// failure inside an otherwise valid computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operation requires a symmetric kernel")]
    NotSymmetric,

    #[error("spectral precondition failed: {0}")]
    Spectral(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("monotonicity violated: {0}")]
    Monotonicity(String),

    #[error("sign condition violated: {0}")]
    SignCondition(String),
}

impl Error {
    /// True when the error reports a violated precondition rather than a
    /// failure of the numerics.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::DimensionMismatch { .. }
                | Error::NotSymmetric
                | Error::Spectral(_)
                | Error::SignCondition(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
