//! The polytope of (absolutely continuous) martingale measures in leaf
//! coordinates: equality description, exact vertex enumeration with a
//! combinatorial cap, sampled vertices and interior samples.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::market::model::MarketModel;

/// Equality description { q >= 0, matrix q = rhs } of the closed polytope of
/// martingale measures. Row 0 is the normalization; the remaining rows impose
/// one martingale constraint per (internal node, asset).
#[derive(Debug, Clone)]
pub struct EmmPolytope {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

pub fn equalities(model: &MarketModel) -> EmmPolytope {
    let tree = model.tree();
    let leaves = tree.leaves().len();
    let d = model.asset_count();
    let rows = 1 + tree.internal_nodes().len() * d;
    let mut matrix = DMatrix::zeros(rows, leaves);
    let mut rhs = DVector::zeros(rows);
    for l in 0..leaves {
        matrix[(0, l)] = 1.0;
    }
    rhs[0] = 1.0;
    let mut r = 1;
    for &node in tree.internal_nodes() {
        for a in 0..d {
            for &child in tree.node(node).children() {
                let delta = model.edge_delta(node, child, a);
                for leaf_rank in tree.subtree_leaf_ranks(child) {
                    matrix[(r, leaf_rank)] = delta;
                }
            }
            r += 1;
        }
    }
    EmmPolytope { matrix, rhs }
}

/// Max absolute violation of the equality system by a leaf-probability
/// vector.
pub fn residual(model: &MarketModel, leaf_probs: &[f64]) -> f64 {
    let poly = equalities(model);
    let q = DVector::from_column_slice(leaf_probs);
    (&poly.matrix * q - &poly.rhs).amax()
}

/// Vertex set of the martingale-measure polytope.
#[derive(Debug, Clone)]
pub struct Vertices {
    pub points: Vec<Vec<f64>>,
    /// False when enumeration hit the combinatorial cap and `points` only
    /// holds sampled vertices.
    pub complete: bool,
}

fn binomial_count(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 0..k {
        c *= (n - i) as f64 / (i + 1) as f64;
        if c > 1e18 {
            return f64::INFINITY;
        }
    }
    c
}

fn push_dedup(points: &mut Vec<Vec<f64>>, candidate: Vec<f64>) {
    let dup = points
        .iter()
        .any(|p| p.iter().zip(&candidate).all(|(a, b)| (a - b).abs() <= 1e-9));
    if !dup {
        points.push(candidate);
    }
}

/// Enumerates all vertices (basic feasible solutions) when the number of
/// column bases stays below `max_bases`; otherwise falls back to
/// random-objective sampling with a fixed internal seed and reports
/// `complete = false`.
pub fn vertices(model: &MarketModel, max_bases: usize) -> Result<Vertices> {
    let poly = equalities(model);
    let leaves = poly.matrix.ncols();

    // Reduce to independent rows.
    let (reduced, rhs) = crate::linalg::reduced_system(&poly.matrix, &poly.rhs, 1e-10);
    let rank = reduced.nrows();

    if binomial_count(leaves, rank) > max_bases as f64 {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        let points = sample_vertices(model, 4 * max_bases.min(256), &mut rng)?;
        return Ok(Vertices {
            points,
            complete: false,
        });
    }

    let mut points = Vec::new();
    let mut combo: Vec<usize> = (0..rank).collect();
    loop {
        let cols: Vec<_> = combo.iter().map(|&c| reduced.column(c)).collect();
        let basis = DMatrix::from_columns(&cols);
        if let Some(lu) = basis.full_piv_lu().try_inverse() {
            let xb = &lu * &rhs;
            if xb.iter().all(|&v| v >= -1e-10) {
                let mut q = vec![0.0; leaves];
                for (slot, &col) in combo.iter().enumerate() {
                    q[col] = xb[slot].max(0.0);
                }
                let total: f64 = q.iter().sum();
                if total > 0.0 && (total - 1.0).abs() < 1e-7 {
                    for v in q.iter_mut() {
                        *v /= total;
                    }
                    push_dedup(&mut points, q);
                }
            }
        }
        // Next k-combination of {0..leaves}.
        let mut i = rank;
        loop {
            if i == 0 {
                return Ok(Vertices {
                    points,
                    complete: true,
                });
            }
            i -= 1;
            if combo[i] != i + leaves - rank {
                combo[i] += 1;
                for j in i + 1..rank {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Collects distinct vertices by optimizing random objectives over the
/// polytope (every LP optimum is a basic feasible solution).
pub fn sample_vertices(
    model: &MarketModel,
    tries: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};
    let poly = equalities(model);
    let leaves = poly.matrix.ncols();
    let mut points = Vec::new();
    for _ in 0..tries {
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let qvars: Vec<_> = (0..leaves)
            .map(|_| lp.add_var(rng.random_range(-1.0..1.0), (0.0, f64::INFINITY)))
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
            .map_err(|e| Error::Internal(format!("vertex-sampling LP failed: {e:?}")))?;
        let q: Vec<f64> = qvars.iter().map(|&v| sol[v].max(0.0)).collect();
        push_dedup(&mut points, q);
    }
    Ok(points)
}

/// Strictly positive interior points: convex mixtures of an interior anchor
/// with random combinations of vertices.
pub fn interior_samples(
    vertices: &[Vec<f64>],
    anchor: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let lambda = rng.random_range(0.05..0.95);
        let mut point = vec![0.0; anchor.len()];
        if vertices.is_empty() {
            point.copy_from_slice(anchor);
        } else {
            let mut weights: Vec<f64> = (0..vertices.len())
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                weights = vec![1.0 / vertices.len() as f64; vertices.len()];
            } else {
                for w in weights.iter_mut() {
                    *w /= total;
                }
            }
            for (vtx, w) in vertices.iter().zip(&weights) {
                for (p, v) in point.iter_mut().zip(vtx) {
                    *p += w * v;
                }
            }
            for (p, a) in point.iter_mut().zip(anchor) {
                *p = lambda * a + (1.0 - lambda) * *p;
            }
        }
        out.push(point);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures;
    use crate::market::{ensure_no_arbitrage, Claim};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn trinomial_vertices_are_the_segment_ends() {
        let m = fixtures::trinomial();
        let v = vertices(&m, 10_000).unwrap();
        assert!(v.complete);
        assert_eq!(v.points.len(), 2);
        // Family q = (s/2, 1-1.5s, s): endpoints s = 0 and s = 2/3.
        let mut pts = v.points.clone();
        pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_abs_diff_eq!(pts[0][0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pts[0][1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pts[1][0], 1.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pts[1][2], 2.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn binomial_polytope_is_a_singleton() {
        let m = fixtures::binomial();
        let v = vertices(&m, 10_000).unwrap();
        assert!(v.complete);
        assert_eq!(v.points.len(), 1);
        assert_abs_diff_eq!(v.points[0][0], 1.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn replicable_claim_prices_agree_at_all_vertices() {
        let m = fixtures::trinomial();
        let s_t = Claim::new(&m, "S_T", m.terminal_prices(0)).unwrap();
        let v = vertices(&m, 10_000).unwrap();
        for q in &v.points {
            let price: f64 = q.iter().zip(s_t.payoffs()).map(|(qi, fi)| qi * fi).sum();
            assert_abs_diff_eq!(price, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn interior_samples_are_strictly_positive_measures() {
        let m = fixtures::trinomial();
        let v = vertices(&m, 10_000).unwrap();
        let anchor = ensure_no_arbitrage(&m).unwrap().leaf_probs(m.tree());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for q in interior_samples(&v.points, &anchor, 50, &mut rng) {
            assert!(q.iter().all(|&p| p > 0.0));
            assert!(residual(&m, &q) < 1e-9);
        }
    }
}
