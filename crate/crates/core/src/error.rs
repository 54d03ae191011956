//! Crate-wide error type.

/// Errors surfaced by the laboratory.
///
/// Parameter and guard violations are reported through this enum; panics are
/// reserved for internal invariant violations (bugs).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied parameter is out of range or inconsistent.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A resource guard (enumeration size, memory bound, degree cap) refused
    /// the request.
    #[error("guard exceeded: {0}")]
    GuardExceeded(String),

    /// A numerical routine hit a degenerate matrix or diverging value.
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    /// The Gram matrix is too close to singular to invert reliably.
    #[error("near-singular Gram matrix: min eigenvalue {min_eigenvalue:.3e}")]
    NearSingularGram { min_eigenvalue: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn guard(msg: impl Into<String>) -> Self {
        Error::GuardExceeded(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::NumericalDegeneracy(msg.into())
    }
}
