//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, validation and the numerical layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Model file could not be read or parsed.
    #[error("failed to parse model file: {0}")]
    Parse(String),

    /// A model invariant is violated; the message names the offending node.
    #[error("invalid model: {0}")]
    Validation(String),

    /// The model admits arbitrage (or is boundary-degenerate, with every
    /// candidate martingale measure putting less than 1e-9 on some leaf).
    #[error("model admits arbitrage: {0}")]
    Arbitrage(String),

    /// The requested position (x, q) lies outside the feasible cone.
    #[error("position is infeasible: {0}")]
    Infeasible(String),

    /// Iterative solver failed to reach its convergence target.
    #[error("solver did not converge after {iterations} iterations (gradient sup-norm {gradient_norm:.3e})")]
    NoConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    /// Invalid argument outside the caller-facing domain (x <= 0, bad step...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The measure supplied where an equivalent martingale measure is required
    /// fails the martingale or equivalence test.
    #[error("not an equivalent martingale measure: {0}")]
    NotMartingaleMeasure(String),

    /// Risk-tolerance wealth process does not exist; callers should fall back
    /// to the finite-difference sensitivity oracle.
    #[error("risk-tolerance wealth process does not exist (replication gap {gap:.3e}); use the finite-difference oracle fallback")]
    RiskToleranceUnavailable { gap: f64 },

    /// The finite-difference oracle failed its step-robustness gate.
    #[error("oracle finite differences are step-unstable: {0}")]
    OracleUnstable(String),

    /// A linear system that the contract requires to be solvable is singular.
    #[error("singular linear system: {0}")]
    Singular(String),

    /// Internal consistency check failed; indicates a bug, not a user error.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
