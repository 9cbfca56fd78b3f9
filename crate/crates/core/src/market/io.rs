//! Model-file loading.
//!
//! A model file is a JSON document:
//!
//! ```json
//! {
//!   "periods": 1,
//!   "assets": ["S"],
//!   "nodes": [
//!     {"id": "root", "parent": null, "probability": 1.0, "prices": [1.0]},
//!     {"id": "up",   "parent": "root", "probability": 0.5, "prices": [2.0]},
//!     {"id": "down", "parent": "root", "probability": 0.5, "prices": [0.5]}
//!   ],
//!   "claims": [
//!     {"label": "call", "payoffs": {"up": 1.0, "down": 0.0}}
//!   ]
//! }
//! ```
//!
//! Probabilities are conditional on the parent node; the root must carry 1.0.
//! Prices are in units of the (constant) savings account; an optional per-node
//! `bond` field is accepted but must equal 1, since all quantities are
//! discounted. Claim payoffs map terminal node ids to values and must cover
//! every leaf exactly once.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::market::model::{Claim, MarketModel};
use crate::market::tree::{NodeId, TreeBuilder};

#[derive(Debug, Deserialize)]
struct RawModel {
    periods: usize,
    assets: Vec<String>,
    nodes: Vec<RawNode>,
    #[serde(default)]
    claims: Vec<RawClaim>,
}

#[derive(Debug, Deserialize)]
struct RawNode {
    id: String,
    parent: Option<String>,
    probability: f64,
    prices: Vec<f64>,
    bond: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawClaim {
    label: String,
    payoffs: HashMap<String, f64>,
}

/// A parsed and validated model file: the market plus its claims.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: MarketModel,
    pub claims: Vec<Claim>,
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path.as_ref())?;
    load_model_str(&text)
}

pub fn load_model_str(text: &str) -> Result<LoadedModel> {
    let raw: RawModel = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;

    let mut index_of: HashMap<String, usize> = HashMap::with_capacity(raw.nodes.len());
    let mut builder = TreeBuilder::new();
    let mut prices = Vec::with_capacity(raw.nodes.len());

    for (i, rn) in raw.nodes.iter().enumerate() {
        if index_of.contains_key(&rn.id) {
            return Err(Error::Validation(format!("duplicate node id '{}'", rn.id)));
        }
        if let Some(b) = rn.bond {
            if b != 1.0 {
                return Err(Error::Validation(format!(
                    "node '{}': bond price {b} != 1; the model must be expressed in discounted terms",
                    rn.id
                )));
            }
        }
        let id = match &rn.parent {
            None => {
                if i != 0 {
                    return Err(Error::Validation(format!(
                        "node '{}' has no parent; only the first node may be the root",
                        rn.id
                    )));
                }
                if rn.probability != 1.0 {
                    return Err(Error::Validation(format!(
                        "root node '{}' must carry probability 1.0, got {}",
                        rn.id, rn.probability
                    )));
                }
                builder.add_root(rn.id.clone())
            }
            Some(pid) => {
                let pi = *index_of.get(pid).ok_or_else(|| {
                    Error::Validation(format!(
                        "node '{}' references unknown parent '{pid}' (parents must precede children)",
                        rn.id
                    ))
                })?;
                builder.add_child(NodeId(pi), rn.probability, rn.id.clone())
            }
        };
        index_of.insert(rn.id.clone(), id.index());
        prices.push(rn.prices.clone());
    }

    let tree = builder.build(raw.periods)?;
    let model = MarketModel::from_parts(tree, raw.assets, prices)?;

    let mut claims = Vec::with_capacity(raw.claims.len());
    for rc in &raw.claims {
        let mut payoffs = vec![f64::NAN; model.tree().leaves().len()];
        let mut seen = 0usize;
        for (id, &value) in &rc.payoffs {
            let i = *index_of.get(id).ok_or_else(|| {
                Error::Validation(format!("claim '{}' pays at unknown node '{id}'", rc.label))
            })?;
            let rank = model.tree().leaf_rank(NodeId(i)).ok_or_else(|| {
                Error::Validation(format!(
                    "claim '{}' pays at non-terminal node '{id}'",
                    rc.label
                ))
            })?;
            payoffs[rank] = value;
            seen += 1;
        }
        if seen != model.tree().leaves().len() {
            let missing = model
                .tree()
                .leaves()
                .iter()
                .find(|&&l| payoffs[model.tree().leaf_rank(l).unwrap()].is_nan())
                .map(|&l| model.tree().node(l).label.clone())
                .unwrap_or_default();
            return Err(Error::Validation(format!(
                "claim '{}' is missing a payoff at leaf '{missing}'",
                rc.label
            )));
        }
        claims.push(Claim::new(&model, rc.label.clone(), payoffs)?);
    }

    Ok(LoadedModel { model, claims })
}
