//! Brute-force verification path: prices and sensitivities straight from the
//! indirect utility by finite differences, plus a direct minimization over
//! the martingale polytope for the dual problem.
//!
//! Nothing here shares code with the closed-form pricing path beyond the
//! primal solver itself; disagreements beyond tolerance are treated as bugs,
//! not noise. Speed is explicitly a non-goal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market::{self, polytope, Claim, MarketModel};
use crate::solver;
use crate::utility::UtilityFunction;

/// Step sizes and knobs for the finite-difference oracle.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Relative step for differences in initial wealth.
    pub step_x: f64,
    /// Relative step for differences in claim quantities.
    pub step_q: f64,
    /// Richardson refinement levels applied to the first-order differences
    /// of the indifference gradient (0 = plain central differences).
    pub richardson_depth: usize,
    /// Multiplier on the primal solver's gradient target.
    pub solver_tol_factor: f64,
    /// When set, `marginal_price` verifies the indifference property of the
    /// returned vector against perturbed positions (costs extra solves).
    pub verify_indifference: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            step_x: 1e-4,
            step_q: 1e-3,
            richardson_depth: 1,
            solver_tol_factor: 1.0,
            verify_indifference: false,
        }
    }
}

impl OracleConfig {
    pub fn with_step_q(step_q: f64) -> Self {
        OracleConfig {
            step_q,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("step_x", self.step_x), ("step_q", self.step_q)] {
            if !(s > 1e-7 && s < 1e-2) {
                return Err(Error::InvalidArgument(format!(
                    "oracle {name} = {s} outside (1e-7, 1e-2)"
                )));
            }
        }
        if self.richardson_depth > 3 {
            return Err(Error::InvalidArgument(format!(
                "richardson_depth = {} exceeds 3",
                self.richardson_depth
            )));
        }
        Ok(())
    }
}

/// Central difference of `f` around 0 at step `h`, refined by `depth` levels
/// of Richardson extrapolation.
fn central_diff(
    f: &mut impl FnMut(f64) -> Result<f64>,
    h: f64,
    depth: usize,
) -> Result<f64> {
    let mut table = Vec::with_capacity(depth + 1);
    for k in 0..=depth {
        let hk = h / (1 << k) as f64;
        table.push((f(hk)? - f(-hk)?) / (2.0 * hk));
    }
    for level in 1..=depth {
        let factor = (4.0f64).powi(level as i32);
        for k in (level..=depth).rev() {
            table[k] = (factor * table[k] - table[k - 1]) / (factor - 1.0);
        }
    }
    Ok(table[depth])
}

fn value_at(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    q: &[f64],
    claims: &[Claim],
    cfg: &OracleConfig,
) -> Result<f64> {
    solver::solve_primal_with_tol(model, utility, x, q, claims, cfg.solver_tol_factor)
        .map(|r| r.value)
        .map_err(|e| match e {
            Error::Infeasible(msg) => Error::Infeasible(format!(
                "finite-difference stencil point left the feasible cone: {msg}"
            )),
            other => other,
        })
}

/// Marginal price vector at (x, q) from the definition: the gradient ratio
/// (du/dq_i) / (du/dx) by central differences of the indirect utility.
pub fn marginal_price(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    q: &[f64],
    claims: &[Claim],
    cfg: &OracleConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if q.len() != claims.len() {
        return Err(Error::InvalidArgument(format!(
            "{} positions for {} claims",
            q.len(),
            claims.len()
        )));
    }
    let hx = cfg.step_x * x.abs().max(1.0);
    let ux = central_diff(
        &mut |h| value_at(model, utility, x + h, q, claims, cfg),
        hx,
        cfg.richardson_depth,
    )?;
    let mut prices = Vec::with_capacity(claims.len());
    for i in 0..claims.len() {
        let hq = cfg.step_q * q[i].abs().max(1.0);
        let uq = central_diff(
            &mut |h| {
                let mut qh = q.to_vec();
                qh[i] += h;
                value_at(model, utility, x, &qh, claims, cfg)
            },
            hq,
            cfg.richardson_depth,
        )?;
        prices.push(uq / ux);
    }

    if cfg.verify_indifference {
        let gap = indifference_gap(model, utility, x, q, claims, &prices, cfg)?;
        if gap > 1e-8 {
            return Err(Error::Internal(format!(
                "marginal price fails the indifference property by {gap:.3e}"
            )));
        }
    }
    Ok(prices)
}

/// Worst violation of u(x, q) >= u(x + <q - q', p>, q') over positions q'
/// perturbed one coordinate at a time. Nonpositive values mean the
/// indifference property holds on the sample.
pub fn indifference_gap(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    q: &[f64],
    claims: &[Claim],
    prices: &[f64],
    cfg: &OracleConfig,
) -> Result<f64> {
    let base = value_at(model, utility, x, q, claims, cfg)?;
    let mut worst: f64 = f64::NEG_INFINITY;
    for i in 0..claims.len() {
        for sign in [-1.0, 1.0] {
            let dq = sign * cfg.step_q * q[i].abs().max(1.0);
            let mut qp = q.to_vec();
            qp[i] += dq;
            // Budget-neutral swap: cash changes by -dq * p_i.
            let xp = x - dq * prices[i];
            let candidate = match value_at(model, utility, xp, &qp, claims, cfg) {
                Ok(v) => v,
                Err(Error::Infeasible(_)) => continue,
                Err(e) => return Err(e),
            };
            worst = worst.max(candidate - base);
        }
    }
    Ok(worst)
}

/// Finite-difference sensitivities at q = 0: the wealth slope p'(x) and the
/// quantity sensitivity matrix D with D_ij = dp_i/dq_j.
pub fn sensitivity_fd(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    claims: &[Claim],
    cfg: &OracleConfig,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    let m = claims.len();
    let q0 = vec![0.0; m];

    let hx = cfg.step_x * x.abs().max(1.0);
    let p_up = marginal_price(model, utility, x + hx, &q0, claims, cfg)?;
    let p_dn = marginal_price(model, utility, x - hx, &q0, claims, cfg)?;
    let p_prime: Vec<f64> = p_up
        .iter()
        .zip(&p_dn)
        .map(|(&a, &b)| (a - b) / (2.0 * hx))
        .collect();

    let mut d = DMatrix::zeros(m, m);
    for j in 0..m {
        let hq = cfg.step_q;
        let mut qp = q0.clone();
        qp[j] += hq;
        let mut qm = q0.clone();
        qm[j] -= hq;
        let pp = marginal_price(model, utility, x, &qp, claims, cfg)?;
        let pm = marginal_price(model, utility, x, &qm, claims, cfg)?;
        for i in 0..m {
            d[(i, j)] = (pp[i] - pm[i]) / (2.0 * hq);
        }
    }
    Ok((p_prime, d))
}

/// Runs [`sensitivity_fd`] at quantity steps 1e-3 and 1e-4 and accepts the
/// result only if the two agree within 1e-4 relative; this gate runs before
/// any comparison against the closed-form path.
pub fn sensitivity_fd_robust(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    claims: &[Claim],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (p_prime, d_coarse) =
        sensitivity_fd(model, utility, x, claims, &OracleConfig::with_step_q(1e-3))?;
    let (_, d_fine) = sensitivity_fd(model, utility, x, claims, &OracleConfig::with_step_q(1e-4))?;
    let scale = d_coarse.amax().max(1.0);
    let diff = (&d_coarse - &d_fine).amax();
    if diff > 1e-4 * scale {
        return Err(Error::OracleUnstable(format!(
            "D differs by {diff:.3e} (scale {scale:.3e}) between steps 1e-3 and 1e-4"
        )));
    }
    Ok((p_prime, d_coarse))
}

/// Direct minimization of E[V(Y_T)] over the closed martingale polytope in
/// reduced coordinates (damped Newton on the equality-constraint null space).
/// Returns (v(y), terminal deflator per leaf, leaf probabilities of the
/// minimizer). Serves as the independent check of the first-order-condition
/// route in `solver::solve_dual`.
pub fn dual_minimize_polytope(
    model: &MarketModel,
    utility: UtilityFunction,
    y: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if !(y > 0.0) {
        return Err(Error::InvalidArgument(format!("need y > 0, got {y}")));
    }
    let anchor = market::ensure_no_arbitrage(model)?;
    let tree = model.tree();
    let pleaf = tree.leaf_probabilities();
    let q0 = DVector::from_vec(anchor.leaf_probs(tree));
    let leaves = q0.len();

    // Orthonormal basis of the feasible directions: the null space of the
    // equality matrix.
    let poly = polytope::equalities(model);
    let null_basis = crate::linalg::null_space(&poly.matrix, 1e-10);
    let k = null_basis.len();

    let objective = |q: &DVector<f64>| -> f64 {
        q.iter()
            .zip(&pleaf)
            .map(|(&ql, &pl)| pl * utility.conjugate(y * ql / pl).unwrap_or(f64::INFINITY))
            .sum()
    };

    let mut q = q0.clone();
    if k > 0 {
        let zmat = DMatrix::from_columns(&null_basis.to_vec());
        let mut theta = DVector::zeros(k);
        let mut f = objective(&q);
        for _ in 0..200 {
            let grad_q = DVector::from_iterator(
                leaves,
                q.iter()
                    .zip(&pleaf)
                    .map(|(&ql, &pl)| y * utility.conjugate_prime(y * ql / pl).unwrap()),
            );
            let hess_diag: Vec<f64> = q
                .iter()
                .zip(&pleaf)
                .map(|(&ql, &pl)| y * y / pl * utility.conjugate_second(y * ql / pl))
                .collect();
            let g = zmat.transpose() * &grad_q;
            if g.amax() <= 1e-11 * f.abs().max(1.0) {
                break;
            }
            let mut h = DMatrix::zeros(k, k);
            for a in 0..k {
                for b in 0..k {
                    let mut acc = 0.0;
                    for l in 0..leaves {
                        acc += zmat[(l, a)] * hess_diag[l] * zmat[(l, b)];
                    }
                    h[(a, b)] = acc;
                }
            }
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => return Err(Error::Internal("dual Hessian not positive definite".into())),
            };
            let slope = g.dot(&step);
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let theta_new = &theta + alpha * &step;
                let q_new = &q0 + &zmat * &theta_new;
                if q_new.iter().all(|&v| v > 0.0) {
                    let f_new = objective(&q_new);
                    if f_new.is_finite() && f_new <= f + 1e-4 * alpha * slope {
                        theta = theta_new;
                        q = q_new;
                        f = f_new;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
    }

    let density: Vec<f64> = q.iter().zip(&pleaf).map(|(&ql, &pl)| y * ql / pl).collect();
    Ok((objective(&q), density, q.iter().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures;
    use crate::pricing;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_out_of_range_steps() {
        assert!(OracleConfig::with_step_q(0.5).validate().is_err());
        assert!(OracleConfig::with_step_q(1e-9).validate().is_err());
    }

    #[test]
    fn marginal_price_matches_davis_price_at_zero_position() {
        let m = fixtures::trinomial();
        let call = Claim::call(&m, 0, 1.0).unwrap();
        let claims = [call];
        let p = marginal_price(
            &m,
            UtilityFunction::Log,
            1.0,
            &[0.0],
            &claims,
            &OracleConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 9.0, epsilon = 1e-6);
        let davis = pricing::davis_price(&m, UtilityFunction::Log, 1.0, &claims).unwrap();
        assert_abs_diff_eq!(p[0], davis[0], epsilon = 1e-6);
    }

    #[test]
    fn replicable_claim_priced_at_replication_cost_for_any_position() {
        let m = fixtures::trinomial();
        let s_t = Claim::new(&m, "S_T", m.terminal_prices(0)).unwrap();
        let claims = [s_t];
        let cfg = OracleConfig::default();
        for q in [-0.4, 0.0, 0.7] {
            let p = marginal_price(&m, UtilityFunction::Log, 1.0, &[q], &claims, &cfg).unwrap();
            assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_claim_is_cash() {
        let m = fixtures::trinomial();
        let c = Claim::constant(&m, 3.0).unwrap();
        let claims = [c];
        let cfg = OracleConfig::default();
        // Central-difference truncation on the cash-shifted value function is
        // O(step_q^2 * c^3), so the tolerance sits at the oracle's accuracy
        // class rather than the solver's.
        for (x, q) in [(1.0, 0.0), (2.0, 0.3), (1.5, -0.2)] {
            let p = marginal_price(&m, UtilityFunction::Log, x, &[q], &claims, &cfg).unwrap();
            assert_abs_diff_eq!(p[0], 3.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn indifference_property_holds_at_marginal_prices() {
        let m = fixtures::trinomial();
        let call = Claim::call(&m, 0, 1.0).unwrap();
        let claims = [call];
        let cfg = OracleConfig {
            verify_indifference: true,
            ..Default::default()
        };
        let p = marginal_price(&m, UtilityFunction::Log, 1.0, &[0.2], &claims, &cfg).unwrap();
        assert!(p[0] > 0.0 && p[0] < 1.0);
    }

    #[test]
    fn trinomial_sensitivity_matches_hand_value() {
        let m = fixtures::trinomial();
        let call = Claim::call(&m, 0, 1.0).unwrap();
        let claims = [call];
        let (p_prime, d) = sensitivity_fd_robust(&m, UtilityFunction::Log, 1.0, &claims).unwrap();
        assert_abs_diff_eq!(d[(0, 0)], -2.0 / 81.0, epsilon = 1e-5);
        assert_abs_diff_eq!(p_prime[0], 0.0, epsilon = 1e-5);
    }

    #[test]
    fn complete_market_sensitivity_vanishes() {
        let m = fixtures::binomial();
        let call = Claim::call(&m, 0, 1.0).unwrap();
        let claims = [call];
        let (_, d) = sensitivity_fd_robust(&m, UtilityFunction::Log, 1.0, &claims).unwrap();
        assert_abs_diff_eq!(d[(0, 0)], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn shifted_claims_give_rank_one_symmetric_d() {
        let m = fixtures::trinomial();
        let call = Claim::call(&m, 0, 1.0).unwrap();
        let shifted = Claim::new(
            &m,
            "call+c",
            call.payoffs().iter().map(|v| v + 0.5).collect(),
        )
        .unwrap();
        let claims = [call, shifted];
        let (_, d) = sensitivity_fd_robust(&m, UtilityFunction::Log, 1.0, &claims).unwrap();
        assert_abs_diff_eq!(d[(0, 1)], d[(1, 0)], epsilon = 1e-6);
        // Residuals of f and f + c coincide: all four entries equal.
        let dd = d[(0, 0)];
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(d[(i, j)], dd, epsilon = 1e-6);
            }
        }
        let det = d[(0, 0)] * d[(1, 1)] - d[(0, 1)] * d[(1, 0)];
        assert_abs_diff_eq!(det, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn dual_polytope_minimization_agrees_with_foc_route() {
        let m = fixtures::trinomial();
        for u in [UtilityFunction::Log, UtilityFunction::power(0.5).unwrap()] {
            for y in [0.5, 1.0, 2.0] {
                let (v_direct, _, q_direct) = dual_minimize_polytope(&m, u, y).unwrap();
                let dual = crate::solver::solve_dual(&m, u, y).unwrap();
                assert_abs_diff_eq!(v_direct, dual.value, epsilon = 1e-9);
                let q_foc = dual.measure.leaf_probs(m.tree());
                for (a, b) in q_direct.iter().zip(&q_foc) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn dual_polytope_on_complete_market_is_the_unique_emm() {
        let m = fixtures::binomial();
        let (_, _, q) = dual_minimize_polytope(&m, UtilityFunction::Log, 1.0).unwrap();
        assert_abs_diff_eq!(q[0], 1.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(q[1], 2.0 / 3.0, epsilon = 1e-10);
    }
}
