//! Deterministic synthetic models for tests, benchmarks and demos.
//!
//! Generated trees are arbitrage-free by construction: asset prices are built
//! as martingales under a randomly drawn interior measure, then paired with a
//! different physical measure.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::market::{Claim, MarketModel, NodeId};
use crate::utility::UtilityFunction;

/// A generated model together with the claim family and problem parameters
/// used by the verification sweeps.
#[derive(Debug, Clone)]
pub struct GeneratedCase {
    pub name: String,
    pub model: MarketModel,
    pub claims: Vec<Claim>,
    pub utility: UtilityFunction,
    pub x: f64,
}

/// The reference one-period trinomial: S0 = 1, terminal prices {2, 1, 0.5},
/// uniform physical probabilities.
pub fn reference_trinomial() -> MarketModel {
    let mut b = MarketModel::builder(&["S"]);
    let root = b.root(&[1.0]);
    let third = 1.0 / 3.0;
    b.child_labeled(root, third, &[2.0], "u");
    b.child_labeled(root, third, &[1.0], "m");
    b.child_labeled(root, third, &[0.5], "d");
    b.build(1).expect("fixture is valid")
}

/// The reference one-period binomial: S0 = 1, up 2, down 0.5, P = (1/2, 1/2).
pub fn reference_binomial() -> MarketModel {
    let mut b = MarketModel::builder(&["S"]);
    let root = b.root(&[1.0]);
    b.child_labeled(root, 0.5, &[2.0], "up");
    b.child_labeled(root, 0.5, &[0.5], "down");
    b.build(1).expect("fixture is valid")
}

fn normalized_draws(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Arbitrage-free random model: price multipliers on each edge are
/// normalized to be a martingale under a random interior measure distinct
/// from the physical one.
pub fn random_model(
    rng: &mut impl Rng,
    periods: usize,
    branching: usize,
    assets: usize,
) -> MarketModel {
    assert!(periods >= 1 && branching >= 2 && assets >= 1);
    let names: Vec<String> = (0..assets).map(|a| format!("S{a}")).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut b = MarketModel::builder(&name_refs);
    let root = b.root(&vec![1.0; assets]);
    let mut frontier: Vec<(NodeId, Vec<f64>, usize)> = vec![(root, vec![1.0; assets], 0)];

    while let Some((node, prices, depth)) = frontier.pop() {
        if depth == periods {
            continue;
        }
        let p_cond = normalized_draws(rng, branching, 0.5, 1.5);
        let q_cond = normalized_draws(rng, branching, 0.5, 1.5);
        // Per-asset multipliers, normalized into martingales under q_cond and
        // redrawn until they spread out enough to carry information.
        let mut mults = vec![vec![0.0; branching]; assets];
        for asset_mults in mults.iter_mut() {
            for _ in 0..100 {
                let raw: Vec<f64> = (0..branching)
                    .map(|_| rng.random_range(0.55..1.75))
                    .collect();
                let mean: f64 = raw.iter().zip(&q_cond).map(|(m, q)| m * q).sum();
                let adj: Vec<f64> = raw.iter().map(|m| m / mean).collect();
                let spread = adj.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v))
                    - adj.iter().fold(f64::INFINITY, |a, &v| a.min(v));
                if spread > 0.08 {
                    *asset_mults = adj;
                    break;
                }
            }
            assert!(!asset_mults.is_empty());
        }
        for c in 0..branching {
            let child_prices: Vec<f64> = (0..assets).map(|a| prices[a] * mults[a][c]).collect();
            let child = b.child(node, p_cond[c], &child_prices);
            frontier.push((child, child_prices, depth + 1));
        }
    }
    b.build(periods).expect("generated model is valid")
}

/// Claim family for a model: an at-the-money call on the first asset, random
/// bounded payoffs, and optionally a replicable bond-plus-stock combination
/// in the last slot.
pub fn random_claims(
    rng: &mut impl Rng,
    model: &MarketModel,
    m: usize,
    include_replicable: bool,
) -> Vec<Claim> {
    assert!(m >= 1);
    let mut claims = Vec::with_capacity(m);
    claims.push(Claim::call(model, 0, 1.0).expect("call on asset 0"));
    while claims.len() < m {
        let last_slot = claims.len() == m - 1;
        if last_slot && include_replicable && m >= 2 {
            let payoffs: Vec<f64> = model
                .terminal_prices(0)
                .iter()
                .map(|s| 0.3 + 0.5 * s)
                .collect();
            claims.push(Claim::new(model, "bond+stock", payoffs).expect("replicable combo"));
        } else {
            let leaves = model.tree().leaves().len();
            let payoffs: Vec<f64> = (0..leaves).map(|_| rng.random_range(0.0..2.0)).collect();
            claims.push(
                Claim::new(model, format!("random{}", claims.len()), payoffs)
                    .expect("random payoffs"),
            );
        }
    }
    claims
}

/// Deterministic sweep over tree sizes, asset counts, utilities and claim
/// family sizes; the grid behind the cross-verification suites.
pub fn sweep(seed: u64) -> Vec<GeneratedCase> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log = UtilityFunction::Log;
    let pow_half = UtilityFunction::Power { gamma: 0.5 };
    let pow_neg = UtilityFunction::Power { gamma: -1.0 };
    // (periods, branching, assets, utility, claims, include_replicable, x)
    let grid: [(usize, usize, usize, UtilityFunction, usize, bool, f64); 12] = [
        (1, 3, 1, log, 1, false, 1.0),
        (1, 3, 1, pow_half, 1, false, 1.5),
        (1, 4, 2, pow_neg, 2, false, 1.0),
        (1, 2, 1, log, 1, false, 2.0),
        (2, 3, 1, log, 2, true, 1.0),
        (2, 3, 1, pow_neg, 1, false, 1.5),
        (2, 2, 2, pow_half, 2, false, 1.0),
        (2, 4, 2, log, 3, true, 1.0),
        (3, 2, 1, pow_half, 1, false, 1.0),
        (3, 3, 1, pow_neg, 2, false, 2.0),
        (3, 3, 2, log, 1, false, 1.0),
        (1, 4, 1, pow_half, 3, true, 1.0),
    ];
    grid.iter()
        .enumerate()
        .map(
            |(i, &(periods, branching, assets, utility, m, replicable, x))| {
                let model = random_model(&mut rng, periods, branching, assets);
                let claims = random_claims(&mut rng, &model, m, replicable);
                GeneratedCase {
                    name: format!(
                        "case{i:02}[t={periods},b={branching},d={assets},{utility},m={m}{}]",
                        if replicable { ",rep" } else { "" }
                    ),
                    model,
                    claims,
                    utility,
                    x,
                }
            },
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ensure_no_arbitrage;
    use rand::SeedableRng;

    #[test]
    fn generated_models_are_arbitrage_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (t, b, d) in [(1, 3, 1), (2, 4, 2), (3, 2, 1), (2, 3, 2)] {
            let m = random_model(&mut rng, t, b, d);
            let w = ensure_no_arbitrage(&m).expect("generated models have interior measures");
            assert!(w.min_leaf_prob(m.tree()) > 1e-9);
            assert!(w.martingale_residual(&m) < 1e-10);
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let a = sweep(7);
        let b = sweep(7);
        assert_eq!(a.len(), b.len());
        for (ca, cb) in a.iter().zip(&b) {
            assert_eq!(ca.name, cb.name);
            for id in ca.model.tree().node_ids() {
                assert_eq!(ca.model.prices(id), cb.model.prices(id));
            }
            for (x, y) in ca.claims.iter().zip(&cb.claims) {
                assert_eq!(x.payoffs(), y.payoffs());
            }
        }
    }

    #[test]
    fn sweep_covers_the_grid() {
        let cases = sweep(7);
        assert!(cases.len() >= 10);
        assert!(cases.iter().any(|c| c.model.tree().periods() == 3));
        assert!(cases.iter().any(|c| c.model.asset_count() == 2));
        assert!(cases.iter().any(|c| c.claims.len() == 3));
        assert!(cases
            .iter()
            .any(|c| matches!(c.utility, UtilityFunction::Power { gamma } if gamma < 0.0)));
    }
}
