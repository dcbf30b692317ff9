//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by configuration validation, shape checks and training.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is outside its admissible range.
    InvalidConfig(String),
    /// Operands whose dimensions must agree do not.
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    /// Training produced a non-finite loss or weight.
    Divergence { iteration: usize, what: String },
    /// The memorized-patch attack scale would leave the l-inf budget.
    BudgetExceeded { linf: f64, limit: f64 },
    /// An operation needs a non-empty domain (e.g. unlearnable set, checkpoint list).
    EmptyDomain(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {}x{}, got {}x{}", expected.0, expected.1, got.0, got.1)
            }
            Error::Divergence { iteration, what } => {
                write!(f, "divergence at iteration {iteration}: {what}")
            }
            Error::BudgetExceeded { linf, limit } => {
                write!(f, "attack scale exceeds l-inf budget: |x_vuln|_inf = {linf} > {limit}")
            }
            Error::EmptyDomain(msg) => write!(f, "empty domain: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
