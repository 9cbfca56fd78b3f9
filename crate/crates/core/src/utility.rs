//! Utility functions on (0, inf): the power family and its log limit, with
//! derivatives, inverse marginal utility and the convex conjugate.
//!
//! Both kinds have constant relative risk aversion, which keeps them inside
//! the admissible class (risk aversion bounded away from zero and infinity)
//! and makes the associated optimal-investment problems homothetic in wealth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Investor preferences over terminal wealth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UtilityFunction {
    /// U(x) = x^gamma / gamma with gamma < 1, gamma != 0.
    Power { gamma: f64 },
    /// U(x) = ln x.
    Log,
}

impl UtilityFunction {
    pub fn power(gamma: f64) -> Result<Self> {
        let u = UtilityFunction::Power { gamma };
        u.validate()?;
        Ok(u)
    }

    pub fn log() -> Self {
        UtilityFunction::Log
    }

    /// Rejects parameters outside the admissible family. Called explicitly by
    /// consumers that deserialize a utility spec.
    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilityFunction::Power { gamma } => {
                if !gamma.is_finite() || gamma >= 1.0 || gamma == 0.0 {
                    Err(Error::InvalidArgument(format!(
                        "power utility needs gamma < 1, gamma != 0; got {gamma}"
                    )))
                } else {
                    Ok(())
                }
            }
            UtilityFunction::Log => Ok(()),
        }
    }

    /// U(x). Defined for x > 0; returns NaN/-inf outside the domain, which
    /// iterative callers treat as a rejected step.
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            UtilityFunction::Power { gamma } => x.powf(gamma) / gamma,
            UtilityFunction::Log => x.ln(),
        }
    }

    /// U'(x) = marginal utility.
    pub fn marginal(&self, x: f64) -> f64 {
        match *self {
            UtilityFunction::Power { gamma } => x.powf(gamma - 1.0),
            UtilityFunction::Log => 1.0 / x,
        }
    }

    /// U''(x).
    pub fn second(&self, x: f64) -> f64 {
        match *self {
            UtilityFunction::Power { gamma } => (gamma - 1.0) * x.powf(gamma - 2.0),
            UtilityFunction::Log => -1.0 / (x * x),
        }
    }

    /// Inverse of the marginal utility: I(y) with U'(I(y)) = y.
    pub fn inverse_marginal(&self, y: f64) -> f64 {
        match *self {
            UtilityFunction::Power { gamma } => y.powf(1.0 / (gamma - 1.0)),
            UtilityFunction::Log => 1.0 / y,
        }
    }

    /// Relative risk aversion A(x) = -x U''(x) / U'(x); constant for both
    /// kinds.
    pub fn risk_aversion(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "risk aversion needs x > 0, got {x}"
            )));
        }
        Ok(-x * self.second(x) / self.marginal(x))
    }

    /// Risk tolerance -U'(x)/U''(x) = x / A(x).
    pub fn risk_tolerance(&self, x: f64) -> f64 {
        -self.marginal(x) / self.second(x)
    }

    /// Convex conjugate V(y) = sup_{x>0} { U(x) - x y }.
    pub fn conjugate(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "conjugate needs y > 0, got {y}"
            )));
        }
        Ok(match *self {
            UtilityFunction::Power { gamma } => {
                (1.0 - gamma) / gamma * y.powf(gamma / (gamma - 1.0))
            }
            UtilityFunction::Log => -y.ln() - 1.0,
        })
    }

    /// V'(y) = -I(y).
    pub fn conjugate_prime(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "conjugate derivative needs y > 0, got {y}"
            )));
        }
        Ok(-self.inverse_marginal(y))
    }

    /// V''(y) = -1 / U''(I(y)); strictly positive.
    pub fn conjugate_second(&self, y: f64) -> f64 {
        -1.0 / self.second(self.inverse_marginal(y))
    }
}

impl std::fmt::Display for UtilityFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            UtilityFunction::Power { gamma } => write!(f, "power(gamma={gamma})"),
            UtilityFunction::Log => write!(f, "log"),
        }
    }
}
