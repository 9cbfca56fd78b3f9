//! Utility-based pricing of non-traded contingent claims on finite event
//! trees.
//!
//! The crate solves expected-utility maximization with and without static
//! claim endowments, extracts the pricing measure from the first-order
//! conditions, prices claims at the margin, constructs the risk-tolerance
//! wealth process when it exists, and computes the first-order sensitivity of
//! marginal prices to position size two independent ways: a closed form
//! through an orthogonal decomposition under the risk-tolerance numeraire,
//! and a brute-force finite-difference oracle. Every quantity the closed
//! form produces is checkable against the oracle.
//!
//! Modules:
//! - [`market`]: event trees, models, claims, measures, wealth processes,
//!   no-arbitrage/superreplication/replicability via linear programming.
//! - [`utility`]: the power/log utility family with conjugates.
//! - [`solver`]: primal and dual optimal investment, value derivatives.
//! - [`pricing`]: Davis prices, risk tolerance, orthogonal decomposition,
//!   sensitivities, Taylor optimality check, linearized equilibrium.
//! - [`oracle`]: finite-difference verification path.
//! - [`dominance`]: second-order stochastic dominance and universality of a
//!   candidate pricing measure.
//! - [`modelgen`]: deterministic synthetic models for sweeps.

// Domain guards use the `!(x > 0.0)` form on purpose: it rejects NaN along
// with nonpositive values, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dominance;
mod error;
mod linalg;
pub mod market;
pub mod modelgen;
pub mod oracle;
pub mod pricing;
pub mod solver;
pub mod utility;

pub use error::{Error, Result};
pub use market::{
    load_model, Claim, EventTree, LoadedModel, MarketModel, Measure, NodeId, Strategy,
    WealthProcess,
};
pub use solver::{solve_dual, solve_primal, value_derivatives, DualResult, SolveResult};
pub use utility::UtilityFunction;
