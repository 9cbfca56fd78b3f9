//! Expected-utility maximization on the event tree and its dual.
//!
//! The primal problem maximizes E[U(X_T + <q, f>)] over the holdings chosen
//! at every internal node. On a finite tree the objective is smooth and
//! concave in the stacked holdings vector, with the steep marginal utility at
//! zero wealth acting as a natural barrier, so a damped Newton iteration with
//! a positivity-preserving line search converges fast and needs no explicit
//! constraints.
//!
//! The dual minimizer never has to be searched for directly: the first-order
//! conditions of the primal already identify it. The normalized marginal
//! utilities of optimal terminal wealth define the pricing measure, and the
//! dual value function is evaluated through that density. A direct
//! minimization over the martingale polytope exists in the `oracle` module as
//! an independent cross-check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market::{self, endowment, Claim, MarketModel, Measure, Strategy, WealthProcess};
use crate::utility::UtilityFunction;

/// Hard cap on Newton iterations.
const MAX_ITERATIONS: usize = 500;
/// Convergence target for the gradient sup-norm, relative to max(1, |u|).
const GRAD_TOL: f64 = 1e-10;
/// After the target is met, keep polishing down to this level while full
/// Newton steps are still accepted (a few extra iterations at most).
const GRAD_POLISH: f64 = 1e-13;
/// Relative finite-difference step for the value-function derivatives.
const FD_STEP: f64 = 1e-4;

/// Solution of the primal utility-maximization problem.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Attained maximal expected utility u(x, q).
    pub value: f64,
    /// Optimal liquid wealth process.
    pub optimal_wealth: WealthProcess,
    /// Marginal value of initial wealth y = u_x(x, q) = E[U'(X_T + <q,f>)].
    pub dual_variable: f64,
    /// Normalized dual density per leaf: U'(X_T + <q,f>) / y, the
    /// Radon-Nikodym derivative of the pricing measure.
    pub dual_density: Vec<f64>,
    /// The pricing measure defined by `dual_density`.
    pub pricing_measure: Measure,
    /// Terminal wealth including the claim endowment, per leaf.
    pub endowed_terminal: Vec<f64>,
    /// Final gradient sup-norm.
    pub gradient_norm: f64,
    pub iterations: usize,
}

struct PrimalProblem {
    utility: UtilityFunction,
    x: f64,
    /// <q, f> per leaf.
    endow: Vec<f64>,
    /// Physical leaf probabilities.
    pleaf: Vec<f64>,
    /// Sparse rows of the gain map per leaf.
    stencils: Vec<Vec<(usize, f64)>>,
    nvars: usize,
}

impl PrimalProblem {
    fn terminal(&self, h: &DVector<f64>) -> Vec<f64> {
        self.stencils
            .iter()
            .enumerate()
            .map(|(l, row)| {
                let gain: f64 = row.iter().map(|&(v, c)| c * h[v]).sum();
                self.x + self.endow[l] + gain
            })
            .collect()
    }

    fn objective(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(&self.pleaf)
            .map(|(&wl, &p)| p * self.utility.value(wl))
            .sum()
    }

    fn gradient(&self, w: &[f64]) -> DVector<f64> {
        let mut grad = DVector::zeros(self.nvars);
        for (l, row) in self.stencils.iter().enumerate() {
            let up = self.pleaf[l] * self.utility.marginal(w[l]);
            for &(vi, ci) in row {
                grad[vi] += up * ci;
            }
        }
        grad
    }

    fn gradient_hessian(&self, w: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let mut grad = DVector::zeros(self.nvars);
        let mut hess = DMatrix::zeros(self.nvars, self.nvars);
        for (l, row) in self.stencils.iter().enumerate() {
            let up = self.pleaf[l] * self.utility.marginal(w[l]);
            let upp = self.pleaf[l] * self.utility.second(w[l]);
            for &(vi, ci) in row {
                grad[vi] += up * ci;
                for &(vj, cj) in row {
                    hess[(vi, vj)] += upp * ci * cj;
                }
            }
        }
        (grad, hess)
    }
}

/// Newton direction for the concave objective: pseudo-inverse of the
/// negative-definite Hessian restricted to its non-degenerate eigenspace
/// (degenerate directions arise only from redundant assets and carry no
/// gradient).
fn newton_direction(grad: &DVector<f64>, hess: DMatrix<f64>) -> DVector<f64> {
    let eig = hess.symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let cut = 1e-12 * lam_max.max(1.0);
    let mut dir = DVector::zeros(grad.len());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -cut {
            let v = eig.eigenvectors.column(k);
            let coef = -v.dot(grad) / lam;
            dir.axpy(coef, &v.clone_owned(), 1.0);
        }
    }
    dir
}

fn solve_primal_inner(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    q: &[f64],
    claims: &[Claim],
    tol_factor: f64,
) -> Result<SolveResult> {
    utility.validate()?;
    let tree = model.tree();
    let leaves = tree.leaves().len();
    let endow = endowment(claims, q, leaves)?;
    let stencils = market::gain_stencils(model);
    let nvars = tree.internal_nodes().len() * model.asset_count();

    let has_endowment = q.iter().any(|&v| v != 0.0);
    let scale = endow
        .iter()
        .fold(x.abs().max(1.0), |acc, e| acc.max(e.abs()));

    // Initial iterate: pure bond when there is no endowment, otherwise the
    // strategy maximizing worst-case endowed terminal wealth.
    let mut h = DVector::zeros(nvars);
    if has_endowment {
        let base: Vec<f64> = endow.iter().map(|e| x + e).collect();
        // Box the holdings: redundant assets leave near-null directions that
        // drift at roundoff level per unit of holding, which an unbounded LP
        // mistakes for an improving ray.
        let (strategy, worst) = market::max_min_terminal_strategy(model, &base, Some(1e6 * scale))?;
        if worst <= 1e-10 * scale {
            return Err(Error::Infeasible(format!(
                "(x, q) lies outside the feasible cone: best worst-case terminal wealth {worst:.3e}"
            )));
        }
        for (rank, row) in strategy.rows().iter().enumerate() {
            for (a, &v) in row.iter().enumerate() {
                h[rank * model.asset_count() + a] = v;
            }
        }
        // Strip any null-space junk the box allowed in: keep the gains, take
        // the minimum-norm holdings. Fall back if positivity degrades.
        let mut jmat = DMatrix::zeros(leaves, nvars);
        for (l, row) in stencils.iter().enumerate() {
            for &(v, c) in row {
                jmat[(l, v)] += c;
            }
        }
        let gains = &jmat * &h;
        let h_clean = crate::linalg::least_squares_min_norm(&jmat, &gains, 1e-10);
        let feasible_clean = stencils.iter().enumerate().all(|(l, row)| {
            let gain: f64 = row.iter().map(|&(v, c)| c * h_clean[v]).sum();
            x + endow[l] + gain > 0.0
        });
        if feasible_clean {
            h = h_clean;
        }
    } else if !(x > 0.0) {
        return Err(Error::Infeasible(format!(
            "initial capital must be positive without endowments, got {x}"
        )));
    }

    let problem = PrimalProblem {
        utility,
        x,
        endow,
        pleaf: tree.leaf_probabilities(),
        stencils,
        nvars,
    };

    let mut w = problem.terminal(&h);
    debug_assert!(w.iter().all(|&v| v > 0.0));
    let mut value = problem.objective(&w);
    let mut gnorm = f64::INFINITY;
    let mut iterations = 0;
    let mut polish = 0usize;

    while iterations < MAX_ITERATIONS {
        let (grad, hess) = problem.gradient_hessian(&w);
        gnorm = grad.amax();
        let utol = value.abs().max(1.0);
        let target = GRAD_TOL * tol_factor * utol;
        if gnorm <= GRAD_POLISH * utol {
            break;
        }
        if gnorm <= target {
            polish += 1;
            if polish > 4 {
                break;
            }
        }

        let dir = newton_direction(&grad, hess);
        let slope = grad.dot(&dir);
        if !(slope > 0.0) {
            if gnorm <= target {
                break;
            }
            return Err(Error::NoConvergence {
                iterations,
                gradient_norm: gnorm,
            });
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let h_new = &h + alpha * &dir;
            let w_new = problem.terminal(&h_new);
            if w_new.iter().all(|&v| v > 0.0) {
                let value_new = problem.objective(&w_new);
                if value_new.is_finite() {
                    // Near the optimum the objective improvement drops below
                    // 1 ulp, so gradient decrease stands in for Armijo.
                    let armijo = value_new >= value + 1e-4 * alpha * slope;
                    let grad_progress = problem.gradient(&w_new).amax() <= 0.9 * gnorm;
                    if armijo || grad_progress {
                        h = h_new;
                        w = w_new;
                        value = value_new;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            if gnorm <= target {
                break;
            }
            return Err(Error::NoConvergence {
                iterations,
                gradient_norm: gnorm,
            });
        }
    }

    let utol = value.abs().max(1.0);
    if gnorm > GRAD_TOL * tol_factor * utol {
        return Err(Error::NoConvergence {
            iterations,
            gradient_norm: gnorm,
        });
    }

    // First-order conditions: normalized marginal utilities define the
    // pricing measure.
    let marginals: Vec<f64> = w.iter().map(|&wl| utility.marginal(wl)).collect();
    let y: f64 = marginals
        .iter()
        .zip(&problem.pleaf)
        .map(|(&m, &p)| p * m)
        .sum();
    let dual_density: Vec<f64> = marginals.iter().map(|&m| m / y).collect();
    let qhat: Vec<f64> = dual_density
        .iter()
        .zip(&problem.pleaf)
        .map(|(&dd, &p)| dd * p)
        .collect();
    let pricing_measure = Measure::equivalent_from_leaf_probs(tree, &qhat)?;
    let mart = pricing_measure.martingale_residual(model);
    if mart > 1e-6 {
        return Err(Error::Internal(format!(
            "dual density is not a martingale density (residual {mart:.3e}); solver postcondition violated"
        )));
    }

    let d = model.asset_count();
    let rows = tree
        .internal_nodes()
        .iter()
        .enumerate()
        .map(|(rank, _)| (0..d).map(|a| h[rank * d + a]).collect())
        .collect();
    let strategy = Strategy::new(model, rows)?;
    let optimal_wealth = WealthProcess::from_strategy(model, x, strategy);

    Ok(SolveResult {
        value,
        optimal_wealth,
        dual_variable: y,
        dual_density,
        pricing_measure,
        endowed_terminal: w,
        gradient_norm: gnorm,
        iterations,
    })
}

/// Maximizes E[U(X_T + <q, f>)] over trading strategies with initial capital
/// `x` and static claim positions `q`.
pub fn solve_primal(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    q: &[f64],
    claims: &[Claim],
) -> Result<SolveResult> {
    solve_primal_inner(model, utility, x, q, claims, 1.0)
}

/// Same as [`solve_primal`] with a loosened or tightened gradient target;
/// used by the finite-difference oracle.
pub(crate) fn solve_primal_with_tol(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    q: &[f64],
    claims: &[Claim],
    tol_factor: f64,
) -> Result<SolveResult> {
    solve_primal_inner(model, utility, x, q, claims, tol_factor)
}

/// Solution of the dual problem at a given marginal value y.
#[derive(Debug, Clone)]
pub struct DualResult {
    /// v(y) = E[V(Y_T)] at the minimizer.
    pub value: f64,
    /// Minimizing terminal deflator Y_T per leaf (= y times the pricing
    /// density).
    pub density: Vec<f64>,
    /// Conjugate wealth x = -v'(y), i.e. the x with u'(x) = y.
    pub dual_wealth: f64,
    /// The martingale measure with density `density / y`.
    pub measure: Measure,
}

/// Solves the dual problem by inverting y = u'(x) (monotone bisection with a
/// homogeneity-informed starting point) and reading the minimizer off the
/// primal first-order conditions.
pub fn solve_dual(model: &MarketModel, utility: UtilityFunction, y: f64) -> Result<DualResult> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dual problem needs y > 0, got {y}"
        )));
    }
    let marginal_at =
        |x: f64| -> Result<f64> { Ok(solve_primal(model, utility, x, &[], &[])?.dual_variable) };

    let y1 = marginal_at(1.0)?;
    // Both utility kinds are homothetic, so this guess is already exact up to
    // solver noise; the bisection below makes no such assumption.
    let mut guess = match utility {
        UtilityFunction::Power { gamma } => (y / y1).powf(1.0 / (gamma - 1.0)),
        UtilityFunction::Log => y1 / y,
    };
    if !guess.is_finite() || guess <= 0.0 {
        guess = 1.0;
    }

    let x_star = if (marginal_at(guess)? - y).abs() <= 1e-12 * y {
        guess
    } else {
        // u' is strictly decreasing; expand a bracket around the guess.
        let mut lo = guess;
        let mut hi = guess;
        for _ in 0..120 {
            if marginal_at(lo)? >= y {
                break;
            }
            lo *= 0.5;
        }
        for _ in 0..120 {
            if marginal_at(hi)? <= y {
                break;
            }
            hi *= 2.0;
        }
        if !(marginal_at(lo)? >= y && marginal_at(hi)? <= y) {
            return Err(Error::Internal(
                "failed to bracket the conjugate wealth for the dual problem".into(),
            ));
        }
        let mut a = lo;
        let mut b = hi;
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if marginal_at(mid)? > y {
                a = mid;
            } else {
                b = mid;
            }
            if (b - a) <= 1e-14 * b {
                break;
            }
        }
        0.5 * (a + b)
    };

    let primal = solve_primal(model, utility, x_star, &[], &[])?;
    let density: Vec<f64> = primal
        .endowed_terminal
        .iter()
        .map(|&wl| utility.marginal(wl))
        .collect();
    let pleaf = model.tree().leaf_probabilities();
    let value = density
        .iter()
        .zip(&pleaf)
        .map(|(&yt, &p)| p * utility.conjugate(yt).expect("positive deflator"))
        .sum();
    Ok(DualResult {
        value,
        density,
        dual_wealth: x_star,
        measure: primal.pricing_measure,
    })
}

/// First and second derivative of x -> u(x, 0) by Richardson-refined central
/// finite differences at relative step 1e-4.
pub fn value_derivatives(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
) -> Result<(f64, f64)> {
    if !(x > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "value derivatives need x > 0, got {x}"
        )));
    }
    let eval = |xx: f64| -> Result<f64> { Ok(solve_primal(model, utility, xx, &[], &[])?.value) };
    let step = FD_STEP * x;
    let f0 = eval(x)?;
    let fp1 = eval(x + step)?;
    let fm1 = eval(x - step)?;
    let fp2 = eval(x + 0.5 * step)?;
    let fm2 = eval(x - 0.5 * step)?;

    let d_h = (fp1 - fm1) / (2.0 * step);
    let d_h2 = (fp2 - fm2) / step;
    let u1 = (4.0 * d_h2 - d_h) / 3.0;

    let s_h = (fp1 - 2.0 * f0 + fm1) / (step * step);
    let s_h2 = (fp2 - 2.0 * f0 + fm2) / (0.25 * step * step);
    let u2 = (4.0 * s_h2 - s_h) / 3.0;

    if !(u1 > 0.0) || !(u2 < 0.0) {
        return Err(Error::Internal(format!(
            "value derivatives lost monotonicity/concavity: u' = {u1:.6e}, u'' = {u2:.6e}"
        )));
    }
    Ok((u1, u2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// Independent one-variable oracle for the trinomial log problem:
    /// bisection on the first-order condition 1/(1+h) = 0.5/(1 - 0.5 h).
    fn trinomial_log_holding_oracle() -> f64 {
        let foc = |h: f64| 1.0 / (1.0 + h) - 0.5 / (1.0 - 0.5 * h);
        let (mut lo, mut hi) = (0.0, 1.9);
        assert!(foc(lo) > 0.0 && foc(hi) < 0.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if foc(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn trinomial_log_matches_bisection_oracle() {
        let m = fixtures::trinomial();
        let r = solve_primal(&m, UtilityFunction::Log, 1.0, &[], &[]).unwrap();
        let h_oracle = trinomial_log_holding_oracle();
        assert_abs_diff_eq!(h_oracle, 0.5, epsilon = 1e-12);
        let h = r.optimal_wealth.strategy.at(m.tree(), m.tree().root())[0];
        assert_abs_diff_eq!(h, h_oracle, epsilon = 1e-9);
        let term = r.optimal_wealth.terminal(m.tree());
        assert_abs_diff_eq!(term[0], 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(term[1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(term[2], 0.75, epsilon = 1e-9);
        let u_expected = (1.5f64.ln() + 1.0f64.ln() + 0.75f64.ln()) / 3.0;
        assert_abs_diff_eq!(r.value, u_expected, epsilon = 1e-12);
        // Pricing measure (2/9, 3/9, 4/9).
        let q = r.pricing_measure.leaf_probs(m.tree());
        assert_abs_diff_eq!(q[0], 2.0 / 9.0, epsilon = 1e-10);
        assert_abs_diff_eq!(q[1], 3.0 / 9.0, epsilon = 1e-10);
        assert_abs_diff_eq!(q[2], 4.0 / 9.0, epsilon = 1e-10);
    }

    #[test]
    fn physical_martingale_measure_means_no_trading() {
        // Grid-search oracle: the optimum over h of the expected log utility
        // must sit at h = 0 when P itself is a martingale measure.
        let m = fixtures::trinomial_p_emm();
        let obj = |h: f64| 0.2 * (1.0f64 + h).ln() + 0.4 * 1.0f64.ln() + 0.4 * (1.0 - 0.5 * h).ln();
        let mut best = (f64::NEG_INFINITY, f64::NAN);
        let mut hh = -0.9;
        while hh <= 1.9 {
            if obj(hh) > best.0 {
                best = (obj(hh), hh);
            }
            hh += 0.001;
        }
        assert_abs_diff_eq!(best.1, 0.0, epsilon = 2e-3);

        let r = solve_primal(&m, UtilityFunction::Log, 1.0, &[], &[]).unwrap();
        let h = r.optimal_wealth.strategy.at(m.tree(), m.tree().root())[0];
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-9);
        for &w in &r.endowed_terminal {
            assert_abs_diff_eq!(w, 1.0, epsilon = 1e-9);
        }
        let q = r.pricing_measure.leaf_probs(m.tree());
        assert_abs_diff_eq!(q[0], 0.2, epsilon = 1e-9);
        assert_abs_diff_eq!(q[1], 0.4, epsilon = 1e-9);
        assert_abs_diff_eq!(q[2], 0.4, epsilon = 1e-9);
    }

    #[test]
    fn log_normalization_and_budget() {
        let m = fixtures::binomial();
        let r = solve_primal(&m, UtilityFunction::Log, 1.0, &[], &[]).unwrap();
        assert_abs_diff_eq!(r.dual_variable, 1.0, epsilon = 1e-9);
        let budget = r
            .pricing_measure
            .expectation(m.tree(), &r.optimal_wealth.terminal(m.tree()));
        assert_abs_diff_eq!(budget, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn first_order_condition_and_density_normalization() {
        let m = fixtures::trinomial();
        for u in [
            UtilityFunction::Log,
            UtilityFunction::power(0.5).unwrap(),
            UtilityFunction::power(-1.0).unwrap(),
        ] {
            let r = solve_primal(&m, u, 1.3, &[], &[]).unwrap();
            let pleaf = m.tree().leaf_probabilities();
            let mass: f64 = r
                .dual_density
                .iter()
                .zip(&pleaf)
                .map(|(&dd, &p)| dd * p)
                .sum();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-10);
            for (rank, &w) in r.endowed_terminal.iter().enumerate() {
                let lhs = u.marginal(w);
                let rhs = r.dual_variable * r.dual_density[rank];
                assert_relative_eq!(lhs, rhs, max_relative = 1e-8);
            }
            assert!(r.pricing_measure.martingale_residual(&m) < 1e-8);
        }
    }

    #[test]
    fn power_scale_invariance() {
        let m = fixtures::trinomial();
        let u = UtilityFunction::power(0.5).unwrap();
        let r1 = solve_primal(&m, u, 1.0, &[], &[]).unwrap();
        let r3 = solve_primal(&m, u, 3.0, &[], &[]).unwrap();
        for (a, b) in r1.endowed_terminal.iter().zip(&r3.endowed_terminal) {
            assert_relative_eq!(3.0 * a, *b, max_relative = 1e-8);
        }
    }

    #[test]
    fn endowed_problem_solves_and_respects_positivity() {
        let m = fixtures::trinomial();
        let call = Claim::call(&m, 0, 1.0).unwrap();
        let r = solve_primal(&m, UtilityFunction::Log, 1.0, &[-0.5], &[call]).unwrap();
        assert!(r.endowed_terminal.iter().all(|&w| w > 0.0));
        assert!(r.gradient_norm <= 1e-10 * r.value.abs().max(1.0));
    }

    #[test]
    fn infeasible_position_is_rejected() {
        let m = fixtures::trinomial();
        let call = Claim::call(&m, 0, 1.0).unwrap();
        // Short 100 calls with one unit of capital: the worst case cannot be
        // kept positive (superreplication price of the short is far above x).
        let err = solve_primal(&m, UtilityFunction::Log, 1.0, &[-100.0], &[call]).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
        let err = solve_primal(&m, UtilityFunction::Log, -1.0, &[], &[]).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
    }

    #[test]
    fn dual_matches_primal_foc_on_trinomial() {
        let m = fixtures::trinomial();
        let dual = solve_dual(&m, UtilityFunction::Log, 1.0).unwrap();
        assert_abs_diff_eq!(dual.dual_wealth, 1.0, epsilon = 1e-9);
        // Density (2/3, 1, 4/3) leafwise.
        assert_abs_diff_eq!(dual.density[0], 2.0 / 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(dual.density[1], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(dual.density[2], 4.0 / 3.0, epsilon = 1e-8);
        let q = dual.measure.leaf_probs(m.tree());
        assert_abs_diff_eq!(q[0], 2.0 / 9.0, epsilon = 1e-9);
    }

    #[test]
    fn dual_value_on_complete_market() {
        // Singleton polytope: v(y) = E[V(y dQ/dP)] directly.
        let m = fixtures::binomial();
        let u = UtilityFunction::power(0.5).unwrap();
        for y in [0.5, 1.0, 2.0] {
            let dual = solve_dual(&m, u, y).unwrap();
            let dq = [2.0 / 3.0, 4.0 / 3.0]; // (1/3)/(1/2), (2/3)/(1/2)
            let expected: f64 =
                0.5 * u.conjugate(y * dq[0]).unwrap() + 0.5 * u.conjugate(y * dq[1]).unwrap();
            assert_relative_eq!(dual.value, expected, max_relative = 1e-8);
        }
    }

    #[test]
    fn dual_conjugacy_via_grid() {
        // v(y) = sup_x { u(x) - x y }, the supremum located by a golden-section
        // refinement of a coarse grid on the concave profile.
        let m = fixtures::trinomial();
        let u = UtilityFunction::Log;
        for y in [0.5, 1.0, 2.0] {
            let dual = solve_dual(&m, u, y).unwrap();
            let g = |x: f64| solve_primal(&m, u, x, &[], &[]).unwrap().value - x * y;
            let (mut a, mut b) = (1e-3, 10.0);
            let phi = 0.5 * (5.0f64.sqrt() - 1.0);
            let (mut c, mut d) = (b - phi * (b - a), a + phi * (b - a));
            for _ in 0..80 {
                if g(c) > g(d) {
                    b = d;
                } else {
                    a = c;
                }
                c = b - phi * (b - a);
                d = a + phi * (b - a);
            }
            let sup = g(0.5 * (a + b));
            assert_abs_diff_eq!(dual.value, sup, epsilon = 1e-7);
        }
    }

    #[test]
    fn value_derivatives_log_and_power() {
        let m = fixtures::trinomial();
        let (u1, u2) = value_derivatives(&m, UtilityFunction::Log, 2.0).unwrap();
        assert_relative_eq!(u1, 0.5, max_relative = 1e-7);
        assert_relative_eq!(-u1 / u2, 2.0, max_relative = 1e-5);

        let pu = UtilityFunction::power(0.5).unwrap();
        let (up1, _) = value_derivatives(&m, pu, 1.0).unwrap();
        let (up4, _) = value_derivatives(&m, pu, 4.0).unwrap();
        // Homogeneity: u'(x) = u'(1) x^(gamma-1).
        assert_relative_eq!(up4, up1 * 4.0f64.powf(-0.5), max_relative = 1e-6);
    }

    #[test]
    fn value_is_concave_in_x_and_q() {
        use rand::{Rng, SeedableRng};
        let m = fixtures::trinomial();
        let call = Claim::call(&m, 0, 1.0).unwrap();
        let claims = [call];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut tested = 0;
        while tested < 50 {
            let xa = rng.random_range(0.5..2.0);
            let xb = rng.random_range(0.5..2.0);
            let qa = rng.random_range(-0.4..0.8);
            let qb = rng.random_range(-0.4..0.8);
            let sol = |x: f64, q: f64| solve_primal(&m, UtilityFunction::Log, x, &[q], &claims);
            let (ra, rb) = match (sol(xa, qa), sol(xb, qb)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => continue,
            };
            let mid = sol(0.5 * (xa + xb), 0.5 * (qa + qb)).unwrap();
            assert!(
                mid.value >= 0.5 * (ra.value + rb.value) - 1e-9,
                "concavity violated at (({xa},{qa}), ({xb},{qb}))"
            );
            tested += 1;
        }
    }
}
