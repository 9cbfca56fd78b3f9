//! Market models on event trees: traded assets, claims, trading strategies,
//! wealth processes and probability measures.
//!
//! Everything is expressed in discounted terms: the savings account is the
//! numeraire and is identically 1 at every node.

use crate::error::{Error, Result};
use crate::market::tree::{EventTree, NodeId, TreeBuilder};

/// A finite-state market: an event tree plus one price per asset per node.
#[derive(Debug, Clone)]
pub struct MarketModel {
    tree: EventTree,
    asset_names: Vec<String>,
    /// node index -> d prices.
    prices: Vec<Vec<f64>>,
}

impl MarketModel {
    pub fn builder(assets: &[&str]) -> ModelBuilder {
        ModelBuilder::new(assets)
    }

    pub fn tree(&self) -> &EventTree {
        &self.tree
    }

    pub fn asset_names(&self) -> &[String] {
        &self.asset_names
    }

    /// Number of traded stocks (the bond comes on top and is constant 1).
    pub fn asset_count(&self) -> usize {
        self.asset_names.len()
    }

    pub fn price(&self, node: NodeId, asset: usize) -> f64 {
        self.prices[node.index()][asset]
    }

    pub fn prices(&self, node: NodeId) -> &[f64] {
        &self.prices[node.index()]
    }

    /// Price increment of `asset` on the edge `node -> child`.
    pub fn edge_delta(&self, node: NodeId, child: NodeId, asset: usize) -> f64 {
        self.price(child, asset) - self.price(node, asset)
    }

    /// Terminal price vector of `asset`, leaf-aligned.
    pub fn terminal_prices(&self, asset: usize) -> Vec<f64> {
        self.tree
            .leaves()
            .iter()
            .map(|&l| self.price(l, asset))
            .collect()
    }

    pub(crate) fn from_parts(
        tree: EventTree,
        asset_names: Vec<String>,
        prices: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let d = asset_names.len();
        if d == 0 {
            return Err(Error::Validation(
                "model must have at least one asset".into(),
            ));
        }
        if prices.len() != tree.len() {
            return Err(Error::Validation(format!(
                "expected prices at {} nodes, got {}",
                tree.len(),
                prices.len()
            )));
        }
        for id in tree.node_ids() {
            let row = &prices[id.index()];
            if row.len() != d {
                return Err(Error::Validation(format!(
                    "node '{}' has {} prices, expected {}",
                    tree.node(id).label,
                    row.len(),
                    d
                )));
            }
            for (a, &p) in row.iter().enumerate() {
                if !p.is_finite() || p <= 0.0 {
                    return Err(Error::Validation(format!(
                        "node '{}': asset '{}' has non-positive price {}",
                        tree.node(id).label,
                        asset_names[a],
                        p
                    )));
                }
            }
        }
        Ok(MarketModel {
            tree,
            asset_names,
            prices,
        })
    }
}

/// Convenience builder for hand-made and generated models.
#[derive(Debug)]
pub struct ModelBuilder {
    tree: TreeBuilder,
    asset_names: Vec<String>,
    prices: Vec<Vec<f64>>,
    has_root: bool,
}

impl ModelBuilder {
    pub fn new(assets: &[&str]) -> Self {
        ModelBuilder {
            tree: TreeBuilder::new(),
            asset_names: assets.iter().map(|s| s.to_string()).collect(),
            prices: Vec::new(),
            has_root: false,
        }
    }

    pub fn root(&mut self, prices: &[f64]) -> NodeId {
        debug_assert!(!self.has_root, "root added twice");
        self.has_root = true;
        let id = self.tree.add_root("root");
        self.prices.push(prices.to_vec());
        id
    }

    pub fn child(&mut self, parent: NodeId, probability: f64, prices: &[f64]) -> NodeId {
        let label = format!("n{}", self.prices.len());
        self.child_labeled(parent, probability, prices, label)
    }

    pub fn child_labeled(
        &mut self,
        parent: NodeId,
        probability: f64,
        prices: &[f64],
        label: impl Into<String>,
    ) -> NodeId {
        let id = self.tree.add_child(parent, probability, label);
        self.prices.push(prices.to_vec());
        id
    }

    pub fn build(self, periods: usize) -> Result<MarketModel> {
        let tree = self.tree.build(periods)?;
        MarketModel::from_parts(tree, self.asset_names, self.prices)
    }
}

/// European contingent claim: one payoff per leaf, leaf-aligned.
#[derive(Debug, Clone)]
pub struct Claim {
    pub label: String,
    payoffs: Vec<f64>,
}

impl Claim {
    pub fn new(model: &MarketModel, label: impl Into<String>, payoffs: Vec<f64>) -> Result<Self> {
        if payoffs.len() != model.tree().leaves().len() {
            return Err(Error::Validation(format!(
                "claim has {} payoffs but the tree has {} leaves",
                payoffs.len(),
                model.tree().leaves().len()
            )));
        }
        if let Some(bad) = payoffs.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "claim payoff {bad} is not finite"
            )));
        }
        Ok(Claim {
            label: label.into(),
            payoffs,
        })
    }

    /// Vanilla call on `asset` struck at `strike`.
    pub fn call(model: &MarketModel, asset: usize, strike: f64) -> Result<Self> {
        let payoffs = model
            .terminal_prices(asset)
            .iter()
            .map(|s| (s - strike).max(0.0))
            .collect();
        Claim::new(
            model,
            format!("call[{}]@{strike}", model.asset_names()[asset]),
            payoffs,
        )
    }

    pub fn constant(model: &MarketModel, value: f64) -> Result<Self> {
        let n = model.tree().leaves().len();
        Claim::new(model, format!("const@{value}"), vec![value; n])
    }

    /// Payoff at the leaf with the given rank in `tree.leaves()`.
    pub fn payoff(&self, leaf_rank: usize) -> f64 {
        self.payoffs[leaf_rank]
    }

    pub fn payoffs(&self) -> &[f64] {
        &self.payoffs
    }
}

/// Combined endowment `<q, f>` per leaf for positions `q` in `claims`.
pub fn endowment(claims: &[Claim], q: &[f64], leaves: usize) -> Result<Vec<f64>> {
    if claims.len() != q.len() {
        return Err(Error::InvalidArgument(format!(
            "{} positions for {} claims",
            q.len(),
            claims.len()
        )));
    }
    let mut e = vec![0.0; leaves];
    for (claim, &qi) in claims.iter().zip(q) {
        for (l, v) in e.iter_mut().enumerate() {
            *v += qi * claim.payoff(l);
        }
    }
    Ok(e)
}

/// Predictable trading strategy: asset holdings chosen at each internal node
/// and carried over the following period.
#[derive(Debug, Clone)]
pub struct Strategy {
    /// internal-node rank -> d holdings.
    holdings: Vec<Vec<f64>>,
}

impl Strategy {
    pub fn zero(model: &MarketModel) -> Self {
        Strategy {
            holdings: vec![vec![0.0; model.asset_count()]; model.tree().internal_nodes().len()],
        }
    }

    pub fn new(model: &MarketModel, holdings: Vec<Vec<f64>>) -> Result<Self> {
        if holdings.len() != model.tree().internal_nodes().len() {
            return Err(Error::Validation(format!(
                "strategy covers {} nodes, expected {}",
                holdings.len(),
                model.tree().internal_nodes().len()
            )));
        }
        if let Some(h) = holdings.iter().find(|h| h.len() != model.asset_count()) {
            return Err(Error::Validation(format!(
                "strategy row has {} holdings, expected {}",
                h.len(),
                model.asset_count()
            )));
        }
        Ok(Strategy { holdings })
    }

    /// Holdings chosen at the internal node `id`.
    pub fn at(&self, tree: &EventTree, id: NodeId) -> &[f64] {
        let rank = tree.internal_rank(id).expect("holdings at internal node");
        &self.holdings[rank]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.holdings
    }
}

/// Self-financing wealth process: initial capital, strategy and the node-wise
/// wealth it generates.
#[derive(Debug, Clone)]
pub struct WealthProcess {
    pub initial_capital: f64,
    pub strategy: Strategy,
    /// node index -> wealth.
    values: Vec<f64>,
}

impl WealthProcess {
    /// Runs the strategy forward from `x`; the self-financing identity holds
    /// by construction.
    pub fn from_strategy(model: &MarketModel, x: f64, strategy: Strategy) -> Self {
        let tree = model.tree();
        let mut values = vec![0.0; tree.len()];
        values[tree.root().index()] = x;
        // Parents precede children in node order, so one forward sweep works.
        for id in tree.node_ids() {
            if tree.node(id).is_leaf() {
                continue;
            }
            let h = strategy.at(tree, id).to_vec();
            for &c in tree.node(id).children() {
                let gain: f64 = h
                    .iter()
                    .enumerate()
                    .map(|(a, &ha)| ha * model.edge_delta(id, c, a))
                    .sum();
                values[c.index()] = values[id.index()] + gain;
            }
        }
        WealthProcess {
            initial_capital: x,
            strategy,
            values,
        }
    }

    /// Wraps explicit node values; `self_financing_residual` tells whether
    /// they actually form a wealth process.
    pub fn from_values(x: f64, strategy: Strategy, values: Vec<f64>) -> Self {
        WealthProcess {
            initial_capital: x,
            strategy,
            values,
        }
    }

    pub fn value(&self, node: NodeId) -> f64 {
        self.values[node.index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Terminal wealth, leaf-aligned.
    pub fn terminal(&self, tree: &EventTree) -> Vec<f64> {
        tree.leaves().iter().map(|&l| self.value(l)).collect()
    }

    /// Max violation of X_child = X_node + H_node . (S_child - S_node).
    pub fn self_financing_residual(&self, model: &MarketModel) -> f64 {
        let tree = model.tree();
        let mut worst: f64 = (self.values[tree.root().index()] - self.initial_capital).abs();
        for id in tree.node_ids() {
            if tree.node(id).is_leaf() {
                continue;
            }
            let h = self.strategy.at(tree, id);
            for &c in tree.node(id).children() {
                let gain: f64 = h
                    .iter()
                    .enumerate()
                    .map(|(a, &ha)| ha * model.edge_delta(id, c, a))
                    .sum();
                worst = worst.max((self.value(c) - self.value(id) - gain).abs());
            }
        }
        worst
    }
}

/// Probability measure on the tree, stored as the probability of passing
/// through each node.
///
/// Construction checks nonnegativity and normalization; strict positivity
/// (equivalence to the physical measure) is validated separately where an
/// operation requires it, because polytope vertices legitimately sit on the
/// boundary.
#[derive(Debug, Clone)]
pub struct Measure {
    /// node index -> probability of the node; 1 at the root.
    node_probs: Vec<f64>,
}

impl Measure {
    pub fn from_leaf_probs(tree: &EventTree, leaf_probs: &[f64]) -> Result<Self> {
        if leaf_probs.len() != tree.leaves().len() {
            return Err(Error::Validation(format!(
                "measure has {} leaf probabilities, tree has {} leaves",
                leaf_probs.len(),
                tree.leaves().len()
            )));
        }
        if let Some(&p) = leaf_probs.iter().find(|&&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Validation(format!(
                "leaf probability {p} is negative or not finite"
            )));
        }
        let total: f64 = leaf_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "leaf probabilities sum to {total:.17}, not 1"
            )));
        }
        let mut node_probs = vec![0.0; tree.len()];
        for (rank, &leaf) in tree.leaves().iter().enumerate() {
            let mut cur = leaf;
            loop {
                node_probs[cur.index()] += leaf_probs[rank];
                match tree.node(cur).parent {
                    Some(p) => cur = p,
                    None => break,
                }
            }
        }
        Ok(Measure { node_probs })
    }

    /// As [`from_leaf_probs`](Self::from_leaf_probs), additionally requiring
    /// strict positivity (equivalence to the physical measure).
    pub fn equivalent_from_leaf_probs(tree: &EventTree, leaf_probs: &[f64]) -> Result<Self> {
        if let Some((rank, &p)) = leaf_probs.iter().enumerate().find(|(_, &p)| !(p > 0.0)) {
            return Err(Error::Validation(format!(
                "measure vanishes at leaf rank {rank} (probability {p}); not equivalent"
            )));
        }
        Self::from_leaf_probs(tree, leaf_probs)
    }

    /// The physical measure carried by the tree itself.
    pub fn physical(tree: &EventTree) -> Self {
        let leaf_probs = tree.leaf_probabilities();
        Measure::from_leaf_probs(tree, &leaf_probs).expect("tree probabilities are a measure")
    }

    pub fn node_prob(&self, id: NodeId) -> f64 {
        self.node_probs[id.index()]
    }

    pub fn leaf_probs(&self, tree: &EventTree) -> Vec<f64> {
        tree.leaves().iter().map(|&l| self.node_prob(l)).collect()
    }

    pub fn min_leaf_prob(&self, tree: &EventTree) -> f64 {
        tree.leaves()
            .iter()
            .map(|&l| self.node_prob(l))
            .fold(f64::INFINITY, f64::min)
    }

    /// Conditional probability of `child` given its parent.
    pub fn conditional(&self, tree: &EventTree, child: NodeId) -> f64 {
        match tree.node(child).parent {
            Some(p) => self.node_probs[child.index()] / self.node_probs[p.index()],
            None => 1.0,
        }
    }

    pub fn expectation(&self, tree: &EventTree, leaf_values: &[f64]) -> f64 {
        tree.leaves()
            .iter()
            .enumerate()
            .map(|(rank, &l)| self.node_prob(l) * leaf_values[rank])
            .sum()
    }

    /// Conditional expectation process E[f | F_t] of a terminal payoff, per
    /// node. Meaningful for measures with positive mass on every node.
    pub fn conditional_expectation(&self, tree: &EventTree, leaf_values: &[f64]) -> Vec<f64> {
        let mut vals = vec![0.0; tree.len()];
        for (rank, &leaf) in tree.leaves().iter().enumerate() {
            vals[leaf.index()] = leaf_values[rank];
        }
        // Children carry higher indices than parents, so sweep backwards.
        for i in (0..tree.len()).rev() {
            let id = NodeId(i);
            if tree.node(id).is_leaf() {
                continue;
            }
            vals[i] = tree
                .node(id)
                .children()
                .iter()
                .map(|&c| self.conditional(tree, c) * vals[c.index()])
                .sum();
        }
        vals
    }

    /// Radon-Nikodym derivative with respect to the physical measure,
    /// leaf-aligned.
    pub fn density_wrt_physical(&self, tree: &EventTree) -> Vec<f64> {
        let p = tree.leaf_probabilities();
        self.leaf_probs(tree)
            .iter()
            .zip(&p)
            .map(|(&q, &pp)| q / pp)
            .collect()
    }

    /// Max over internal nodes and assets of |E[S_next - S_now | node]|.
    /// Requires positive node probabilities.
    pub fn martingale_residual(&self, model: &MarketModel) -> f64 {
        let tree = model.tree();
        let mut worst = 0.0f64;
        for &id in tree.internal_nodes() {
            if self.node_prob(id) <= 0.0 {
                continue;
            }
            for a in 0..model.asset_count() {
                let drift: f64 = tree
                    .node(id)
                    .children()
                    .iter()
                    .map(|&c| self.conditional(tree, c) * model.edge_delta(id, c, a))
                    .sum();
                worst = worst.max(drift.abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn binomial() -> MarketModel {
        let mut b = MarketModel::builder(&["S"]);
        let root = b.root(&[1.0]);
        b.child(root, 0.5, &[2.0]);
        b.child(root, 0.5, &[0.5]);
        b.build(1).unwrap()
    }

    #[test]
    fn rejects_nonpositive_price() {
        let mut b = MarketModel::builder(&["S"]);
        let root = b.root(&[1.0]);
        b.child(root, 0.5, &[2.0]);
        b.child(root, 0.5, &[-0.5]);
        let err = b.build(1).unwrap_err();
        assert!(err.to_string().contains("non-positive price"), "{err}");
    }

    #[test]
    fn wealth_process_self_financing_by_construction() {
        let m = binomial();
        let strat = Strategy::new(&m, vec![vec![2.0 / 3.0]]).unwrap();
        let w = WealthProcess::from_strategy(&m, 1.0 / 3.0, strat);
        let term = w.terminal(m.tree());
        assert_abs_diff_eq!(term[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(term[1], 0.0, epsilon = 1e-12);
        assert!(w.self_financing_residual(&m) < 1e-14);
    }

    #[test]
    fn measure_conditionals_and_expectation() {
        let m = binomial();
        let q = Measure::equivalent_from_leaf_probs(m.tree(), &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        assert_abs_diff_eq!(q.martingale_residual(&m), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            q.expectation(m.tree(), &[1.0, 0.0]),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        let proc_ = q.conditional_expectation(m.tree(), &[1.0, 0.0]);
        assert_abs_diff_eq!(proc_[0], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn measure_rejects_bad_sum_and_negatives() {
        let m = binomial();
        assert!(Measure::from_leaf_probs(m.tree(), &[0.6, 0.6]).is_err());
        assert!(Measure::from_leaf_probs(m.tree(), &[1.2, -0.2]).is_err());
        assert!(Measure::equivalent_from_leaf_probs(m.tree(), &[1.0, 0.0]).is_err());
        assert!(Measure::from_leaf_probs(m.tree(), &[1.0, 0.0]).is_ok());
    }

    #[test]
    fn endowment_combines_claims() {
        let m = binomial();
        let c1 = Claim::call(&m, 0, 1.0).unwrap();
        let c2 = Claim::constant(&m, 2.0).unwrap();
        let e = endowment(&[c1, c2], &[1.0, 0.5], 2).unwrap();
        assert_eq!(e, vec![2.0, 1.0]);
    }
}
