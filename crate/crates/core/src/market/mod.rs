//! Finite-state market models and the linear-programming checks built on
//! them: no-arbitrage, superreplication bounds and replicability.

mod arbitrage;
mod io;
mod model;
pub mod polytope;
mod tree;

pub use arbitrage::{
    check_no_arbitrage, ensure_no_arbitrage, find_arbitrage, is_replicable,
    superreplication_bounds, ArbitrageCheck, ReplicationCheck,
};
pub(crate) use arbitrage::{gain_stencils, max_min_terminal as max_min_terminal_strategy};
pub use io::{load_model, load_model_str, LoadedModel};
pub use model::{endowment, Claim, MarketModel, Measure, ModelBuilder, Strategy, WealthProcess};
pub use tree::{EventTree, Node, NodeId};
