//! No-arbitrage and replication checks, all reduced to small linear programs
//! over the martingale-measure polytope or over trading strategies.

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::error::{Error, Result};
use crate::market::model::{Claim, MarketModel, Measure, Strategy, WealthProcess};
use crate::market::polytope;

/// Minimum leaf probability an interior martingale measure must achieve
/// before the model counts as arbitrage-free. Anything smaller is
/// boundary-degenerate and rejected as arbitrage-adjacent.
pub(crate) const INTERIOR_MARGIN: f64 = 1e-9;

/// Tolerance on the superreplication price gap below which a claim counts as
/// replicable.
pub(crate) const REPLICATION_TOL: f64 = 1e-9;

/// Outcome of [`check_no_arbitrage`].
#[derive(Debug, Clone)]
pub struct ArbitrageCheck {
    pub arbitrage_free: bool,
    /// Interior martingale measure maximizing the minimum leaf probability.
    pub witness: Option<Measure>,
    /// Optimum of the interior feasibility program (negative infinity when
    /// even signed solutions fail to exist).
    pub min_leaf_probability: f64,
    /// True when martingale measures exist but none is equivalent to P.
    pub boundary_degenerate: bool,
    /// A strategy with nonnegative terminal gain, positive somewhere, when
    /// one exists.
    pub arbitrage_strategy: Option<Strategy>,
}

/// Variables of a strategy LP: one per (internal node, asset) pair.
fn strategy_var_count(model: &MarketModel) -> usize {
    model.tree().internal_nodes().len() * model.asset_count()
}

/// Per-leaf sparse rows of the terminal-gain map H -> sum of H . dS along the
/// path; entry (variable index, price increment).
pub(crate) fn gain_stencils(model: &MarketModel) -> Vec<Vec<(usize, f64)>> {
    let tree = model.tree();
    let d = model.asset_count();
    tree.leaves()
        .iter()
        .map(|&leaf| {
            let mut row = Vec::new();
            for (node, child) in tree.path_edges(leaf) {
                let rank = tree.internal_rank(node).expect("path nodes are internal");
                for a in 0..d {
                    row.push((rank * d + a, model.edge_delta(node, child, a)));
                }
            }
            row
        })
        .collect()
}

fn strategy_from_values(model: &MarketModel, values: &[f64]) -> Strategy {
    let d = model.asset_count();
    let rows = model
        .tree()
        .internal_nodes()
        .iter()
        .enumerate()
        .map(|(rank, _)| values[rank * d..(rank + 1) * d].to_vec())
        .collect();
    Strategy::new(model, rows).expect("dimensions match by construction")
}

/// Maximizes the worst-case terminal value of `base + gains(H)` over
/// strategies, optionally box-bounded. Returns the optimal strategy and the
/// attained minimum.
pub(crate) fn max_min_terminal(
    model: &MarketModel,
    base: &[f64],
    bound: Option<f64>,
) -> Result<(Strategy, f64)> {
    let stencils = gain_stencils(model);
    let nvars = strategy_var_count(model);
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let limits = match bound {
        Some(b) => (-b, b),
        None => (f64::NEG_INFINITY, f64::INFINITY),
    };
    let hvars: Vec<_> = (0..nvars).map(|_| lp.add_var(0.0, limits)).collect();
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    for (leaf, row) in stencils.iter().enumerate() {
        let mut terms: Vec<_> = row.iter().map(|&(v, c)| (hvars[v], c)).collect();
        terms.push((t, -1.0));
        lp.add_constraint(&terms, ComparisonOp::Ge, -base[leaf]);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::Internal(format!("worst-case terminal LP failed: {e:?}")))?;
    let values: Vec<f64> = hvars.iter().map(|&v| sol[v]).collect();
    Ok((strategy_from_values(model, &values), sol.objective()))
}

/// Looks for an arbitrage: a box-bounded strategy whose terminal gain is
/// nonnegative everywhere and positive somewhere.
pub fn find_arbitrage(model: &MarketModel) -> Result<Option<Strategy>> {
    // Strict arbitrage first: positive gain in every state.
    let zero = vec![0.0; model.tree().leaves().len()];
    let (strat, worst) = max_min_terminal(model, &zero, Some(1.0))?;
    if worst > 1e-9 {
        return Ok(Some(strat));
    }
    // Free lottery: nonnegative everywhere, positive total.
    let stencils = gain_stencils(model);
    let nvars = strategy_var_count(model);
    let mut objective = vec![0.0; nvars];
    for row in &stencils {
        for &(v, c) in row {
            objective[v] += c;
        }
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let hvars: Vec<_> = (0..nvars)
        .map(|i| lp.add_var(objective[i], (-1.0, 1.0)))
        .collect();
    for row in &stencils {
        let terms: Vec<_> = row.iter().map(|&(v, c)| (hvars[v], c)).collect();
        lp.add_constraint(&terms, ComparisonOp::Ge, 0.0);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::Internal(format!("free-lottery LP failed: {e:?}")))?;
    if sol.objective() > 1e-9 {
        let values: Vec<f64> = hvars.iter().map(|&v| sol[v]).collect();
        return Ok(Some(strategy_from_values(model, &values)));
    }
    Ok(None)
}

/// Tests for existence of an equivalent martingale measure by maximizing the
/// minimum leaf probability subject to the per-node martingale constraints.
pub fn check_no_arbitrage(model: &MarketModel) -> Result<ArbitrageCheck> {
    let poly = polytope::equalities(model);
    let leaves = model.tree().leaves().len();

    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let qvars: Vec<_> = (0..leaves)
        .map(|_| lp.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    for r in 0..poly.matrix.nrows() {
        let terms: Vec<_> = (0..leaves)
            .map(|l| (qvars[l], poly.matrix[(r, l)]))
            .filter(|&(_, c)| c != 0.0)
            .collect();
        lp.add_constraint(&terms, ComparisonOp::Eq, poly.rhs[r]);
    }
    for &q in &qvars {
        lp.add_constraint([(q, 1.0), (t, -1.0)], ComparisonOp::Ge, 0.0);
    }

    match lp.solve() {
        Ok(sol) => {
            let min_prob = sol.objective();
            if min_prob >= INTERIOR_MARGIN {
                let probs: Vec<f64> = qvars.iter().map(|&v| sol[v]).collect();
                let total: f64 = probs.iter().sum();
                let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
                let witness = Measure::equivalent_from_leaf_probs(model.tree(), &probs)?;
                Ok(ArbitrageCheck {
                    arbitrage_free: true,
                    witness: Some(witness),
                    min_leaf_probability: min_prob,
                    boundary_degenerate: false,
                    arbitrage_strategy: None,
                })
            } else {
                Ok(ArbitrageCheck {
                    arbitrage_free: false,
                    witness: None,
                    min_leaf_probability: min_prob,
                    boundary_degenerate: true,
                    arbitrage_strategy: find_arbitrage(model)?,
                })
            }
        }
        Err(microlp::Error::Infeasible) => Ok(ArbitrageCheck {
            arbitrage_free: false,
            witness: None,
            min_leaf_probability: f64::NEG_INFINITY,
            boundary_degenerate: false,
            arbitrage_strategy: find_arbitrage(model)?,
        }),
        Err(e) => Err(Error::Internal(format!("no-arbitrage LP failed: {e:?}"))),
    }
}

/// Returns the interior martingale-measure witness, or an arbitrage error.
pub fn ensure_no_arbitrage(model: &MarketModel) -> Result<Measure> {
    let check = check_no_arbitrage(model)?;
    match check.witness {
        Some(w) => Ok(w),
        None => Err(Error::Arbitrage(if check.boundary_degenerate {
            format!(
                "no equivalent martingale measure; best minimum leaf probability {:.3e} is boundary-degenerate",
                check.min_leaf_probability
            )
        } else {
            "martingale constraints are infeasible".to_string()
        })),
    }
}

fn optimize_over_emm(
    model: &MarketModel,
    objective: &[f64],
    maximize: bool,
) -> Result<(f64, Vec<f64>)> {
    let poly = polytope::equalities(model);
    let leaves = model.tree().leaves().len();
    let dir = if maximize {
        OptimizationDirection::Maximize
    } else {
        OptimizationDirection::Minimize
    };
    let mut lp = Problem::new(dir);
    let qvars: Vec<_> = (0..leaves)
        .map(|l| lp.add_var(objective[l], (0.0, f64::INFINITY)))
        .collect();
    for r in 0..poly.matrix.nrows() {
        let terms: Vec<_> = (0..leaves)
            .map(|l| (qvars[l], poly.matrix[(r, l)]))
            .filter(|&(_, c)| c != 0.0)
            .collect();
        lp.add_constraint(&terms, ComparisonOp::Eq, poly.rhs[r]);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::Internal(format!("martingale-polytope LP failed: {e:?}")))?;
    let q = qvars.iter().map(|&v| sol[v]).collect();
    Ok((sol.objective(), q))
}

/// Cheapest superreplication and most expensive subreplication price of a
/// claim: the extremes of its expectation over the closed martingale-measure
/// polytope.
pub fn superreplication_bounds(model: &MarketModel, claim: &Claim) -> Result<(f64, f64)> {
    ensure_no_arbitrage(model)?;
    let (upper, _) = optimize_over_emm(model, claim.payoffs(), true)?;
    let (lower, _) = optimize_over_emm(model, claim.payoffs(), false)?;
    Ok((lower.min(upper), upper))
}

/// Outcome of [`is_replicable`].
#[derive(Debug, Clone)]
pub struct ReplicationCheck {
    pub lower: f64,
    pub upper: f64,
    /// Superreplication price gap; zero (within tolerance) iff replicable.
    pub gap: f64,
    /// The replicating wealth process, when the claim is attainable.
    pub hedge: Option<WealthProcess>,
}

impl ReplicationCheck {
    pub fn replicable(&self) -> bool {
        self.hedge.is_some()
    }
}

/// Decides replicability from the superreplication gap and, for attainable
/// claims, builds the replicating wealth process by backward induction with a
/// per-node linear solve of H . dS = dV.
pub fn is_replicable(model: &MarketModel, claim: &Claim) -> Result<ReplicationCheck> {
    let (lower, upper) = superreplication_bounds(model, claim)?;
    let scale = claim
        .payoffs()
        .iter()
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let gap = (upper - lower).max(0.0);
    if gap > REPLICATION_TOL * scale {
        return Ok(ReplicationCheck {
            lower,
            upper,
            gap,
            hedge: None,
        });
    }

    let hedge = replicate(model, claim.payoffs(), scale)?;
    Ok(ReplicationCheck {
        lower,
        upper,
        gap,
        hedge: Some(hedge),
    })
}

/// Backward-induction replication of a leaf payoff vector. Fails with an
/// internal error if a node system is inconsistent beyond tolerance (callers
/// only invoke this after the superreplication gap test passed).
pub(crate) fn replicate(model: &MarketModel, payoffs: &[f64], scale: f64) -> Result<WealthProcess> {
    use nalgebra::{DMatrix, DVector};

    let tree = model.tree();
    let d = model.asset_count();
    let mut values = vec![0.0; tree.len()];
    for (rank, &leaf) in tree.leaves().iter().enumerate() {
        values[leaf.index()] = payoffs[rank];
    }
    let mut holdings = vec![vec![0.0; d]; tree.internal_nodes().len()];

    for i in (0..tree.len()).rev() {
        let id = crate::market::tree::NodeId(i);
        if tree.node(id).is_leaf() {
            continue;
        }
        let children = tree.node(id).children();
        let k = children.len();
        // Rows: v_n + H . dS_c = v_c, unknowns (v_n, H).
        let mut a = DMatrix::zeros(k, d + 1);
        let mut b = DVector::zeros(k);
        for (r, &c) in children.iter().enumerate() {
            a[(r, 0)] = 1.0;
            for asset in 0..d {
                a[(r, asset + 1)] = model.edge_delta(id, c, asset);
            }
            b[r] = values[c.index()];
        }
        let x = crate::linalg::least_squares_min_norm(&a, &b, 1e-10);
        let residual = (&a * &x - &b).amax();
        if residual > 1e-8 * scale.max(1.0) {
            return Err(Error::Internal(format!(
                "replication inconsistent at node '{}' (residual {residual:.3e}) despite zero price gap",
                tree.node(id).label
            )));
        }
        values[i] = x[0];
        let rank = tree.internal_rank(id).expect("internal node");
        for asset in 0..d {
            holdings[rank][asset] = x[asset + 1];
        }
    }

    let strategy = Strategy::new(model, holdings)?;
    let wealth = WealthProcess::from_strategy(model, values[tree.root().index()], strategy);
    // The forward pass must land exactly on the payoff.
    let worst = tree
        .leaves()
        .iter()
        .enumerate()
        .map(|(rank, &l)| (wealth.value(l) - payoffs[rank]).abs())
        .fold(0.0f64, f64::max);
    if worst > 1e-8 * scale.max(1.0) {
        return Err(Error::Internal(format!(
            "replication forward pass misses the payoff by {worst:.3e}"
        )));
    }
    Ok(wealth)
}
