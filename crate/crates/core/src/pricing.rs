//! Utility-based pricing of non-traded claims: marginal prices at zero
//! position, the risk-tolerance wealth process, the orthogonal hedge/residual
//! decomposition under the risk-tolerance numeraire, the first-order
//! sensitivity of prices to position size, and the linearized equilibrium
//! position.
//!
//! The central quantity is the matrix D with D_ij = dp_i/dq_j at q = 0. When
//! the risk-tolerance wealth process exists it has a closed form: change
//! numeraire to R/R_0, split each claim's price process into a hedgeable part
//! and an orthogonal residual N, and read off D_ij = (u''/u') E[N_i N_j]
//! under the numeraire measure. The `oracle` module recovers the same matrix
//! from raw finite differences of the indirect utility; the two routes are
//! compared in the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::market::{is_replicable, Claim, MarketModel, Measure, Strategy, WealthProcess};
use crate::oracle;
use crate::solver::{self, SolveResult};
use crate::utility::UtilityFunction;

/// Relative step for the finite differences of the Davis price in x.
const PRICE_SLOPE_STEP: f64 = 1e-4;

/// Davis prices at zero position: expectations of the claim payoffs under
/// the pricing measure of the plain investment problem.
pub fn davis_price(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    claims: &[Claim],
) -> Result<Vec<f64>> {
    let solve = solver::solve_primal(model, utility, x, &[], &[])?;
    Ok(prices_under(&solve.pricing_measure, model, claims))
}

fn prices_under(measure: &Measure, model: &MarketModel, claims: &[Claim]) -> Vec<f64> {
    claims
        .iter()
        .map(|c| measure.expectation(model.tree(), c.payoffs()))
        .collect()
}

/// The risk-tolerance wealth process of an investment problem, when it
/// exists: the wealth process replicating -U'(X_T)/U''(X_T).
#[derive(Debug, Clone)]
pub struct RiskToleranceResult {
    pub exists: bool,
    /// Target terminal payoff -U'(X_T)/U''(X_T), leaf-aligned.
    pub target: Vec<f64>,
    /// The replicating wealth process R, when `exists`.
    pub process: Option<WealthProcess>,
    /// Initial value R_0.
    pub r0: Option<f64>,
    /// Numeraire measure with density R_T Y_T / (R_0 y), when `exists`.
    pub measure: Option<Measure>,
    /// Superreplication gap of the target (0 within tolerance iff `exists`).
    pub replication_residual: f64,
    /// The underlying optimal-investment solution at (x, 0).
    pub solve: SolveResult,
}

/// Builds the risk-tolerance wealth process at (x, 0): forms the target
/// payoff, tests its replicability, constructs R by backward induction under
/// the pricing measure with a per-node hedge solve, and verifies the result
/// is a genuine self-financing wealth process.
pub fn risk_tolerance(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
) -> Result<RiskToleranceResult> {
    let solve = solver::solve_primal(model, utility, x, &[], &[])?;
    let tree = model.tree();
    let target: Vec<f64> = solve
        .endowed_terminal
        .iter()
        .map(|&w| utility.risk_tolerance(w))
        .collect();

    let claim = Claim::new(model, "risk-tolerance target", target.clone())?;
    let rep = is_replicable(model, &claim)?;
    if !rep.replicable() {
        return Ok(RiskToleranceResult {
            exists: false,
            target,
            process: None,
            r0: None,
            measure: None,
            replication_residual: rep.gap,
            solve,
        });
    }

    // R_t = E[target | F_t] under the pricing measure; hedge from per-node
    // least squares on H . dS = dR.
    let qhat = &solve.pricing_measure;
    let values = qhat.conditional_expectation(tree, &target);
    let d = model.asset_count();
    let scale = values.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    let mut holdings = vec![vec![0.0; d]; tree.internal_nodes().len()];
    for &node in tree.internal_nodes() {
        let children = tree.node(node).children();
        let mut a = DMatrix::zeros(children.len(), d);
        let mut b = DVector::zeros(children.len());
        for (r, &c) in children.iter().enumerate() {
            for asset in 0..d {
                a[(r, asset)] = model.edge_delta(node, c, asset);
            }
            b[r] = values[c.index()] - values[node.index()];
        }
        let h = crate::linalg::least_squares_min_norm(&a, &b, 1e-8);
        let rank = tree.internal_rank(node).expect("internal node");
        for asset in 0..d {
            holdings[rank][asset] = h[asset];
        }
    }
    let strategy = Strategy::new(model, holdings)?;
    let r0 = values[tree.root().index()];
    let process = WealthProcess::from_values(r0, strategy, values);
    let sf = process.self_financing_residual(model);
    if sf > 1e-10 * scale {
        return Err(Error::Internal(format!(
            "risk-tolerance candidate is not self-financing (residual {sf:.3e}) although the target passed the replication gap test"
        )));
    }

    // Numeraire measure: reweight the pricing measure by R_T / R_0.
    let qhat_leaf = qhat.leaf_probs(tree);
    let qr_leaf: Vec<f64> = qhat_leaf
        .iter()
        .zip(&target)
        .map(|(&q, &rho)| q * rho / r0)
        .collect();
    let measure = Measure::equivalent_from_leaf_probs(tree, &qr_leaf)?;

    Ok(RiskToleranceResult {
        exists: true,
        target,
        process: Some(process),
        r0: Some(r0),
        measure: Some(measure),
        replication_residual: rep.gap,
        solve,
    })
}

/// Orthogonal decomposition of one claim's price process under the
/// risk-tolerance numeraire.
#[derive(Debug, Clone)]
pub struct KwClaimDecomposition {
    /// Price process of the discounted claim under the numeraire measure,
    /// per node.
    pub price_process: Vec<f64>,
    /// Terminal value of the hedgeable component, leaf-aligned.
    pub hedge_terminal: Vec<f64>,
    /// Terminal value of the orthogonal residual, leaf-aligned.
    pub residual_terminal: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KwDecomposition {
    pub claims: Vec<KwClaimDecomposition>,
    /// Initial discounted prices (= initial hedge values), per claim.
    pub initial_prices: Vec<f64>,
    /// Max violation of the per-node orthogonality conditions.
    pub orthogonality_residual: f64,
}

/// Splits each claim's discounted price process into a wealth-process part
/// and an orthogonal residual by per-node least-squares projection onto the
/// increments of the discounted traded assets (bond and stocks, both risky
/// under the new numeraire).
pub fn kw_decomposition(
    model: &MarketModel,
    rt: &RiskToleranceResult,
    claims: &[Claim],
) -> Result<KwDecomposition> {
    if !rt.exists {
        return Err(Error::RiskToleranceUnavailable {
            gap: rt.replication_residual,
        });
    }
    let tree = model.tree();
    let r = rt.process.as_ref().expect("exists");
    let r0 = rt.r0.expect("exists");
    let qr = rt.measure.as_ref().expect("exists");
    let d = model.asset_count();
    let n_inst = d + 1;

    // Discounted instrument values per node: bond R0/R, stocks S R0/R.
    let mut inst = vec![vec![0.0; n_inst]; tree.len()];
    for id in tree.node_ids() {
        let disc = r0 / r.value(id);
        inst[id.index()][0] = disc;
        for a in 0..d {
            inst[id.index()][a + 1] = model.price(id, a) * disc;
        }
    }

    // Discounted payoffs and their price processes under the numeraire
    // measure.
    let m = claims.len();
    let mut price_processes = Vec::with_capacity(m);
    for claim in claims {
        let f_r: Vec<f64> = claim
            .payoffs()
            .iter()
            .zip(&rt.target)
            .map(|(&f, &rho)| f * r0 / rho)
            .collect();
        price_processes.push(qr.conditional_expectation(tree, &f_r));
    }

    // Per-node projection of price increments onto instrument increments.
    let mut hedge = vec![vec![0.0; tree.len()]; m];
    let mut residual = vec![vec![0.0; tree.len()]; m];
    for i in 0..m {
        hedge[i][tree.root().index()] = price_processes[i][tree.root().index()];
    }
    let mut orth_residual = 0.0f64;
    for &node in tree.internal_nodes() {
        let children = tree.node(node).children();
        let k = children.len();
        let weights: Vec<f64> = children.iter().map(|&c| qr.conditional(tree, c)).collect();
        let mut a = DMatrix::zeros(k, n_inst);
        for (row, &c) in children.iter().enumerate() {
            let w = weights[row].sqrt();
            for j in 0..n_inst {
                a[(row, j)] = w * (inst[c.index()][j] - inst[node.index()][j]);
            }
        }
        for i in 0..m {
            let mut b = DVector::zeros(k);
            for (row, &c) in children.iter().enumerate() {
                b[row] = weights[row].sqrt()
                    * (price_processes[i][c.index()] - price_processes[i][node.index()]);
            }
            // Instrument increments can be collinear up to solver noise (the
            // numeraire itself is a portfolio of them), so the rank cutoff
            // must sit above that noise.
            let beta = crate::linalg::least_squares_min_norm(&a, &b, 1e-8);
            // Orthogonality of the residual increment to every instrument.
            let mut orth = vec![0.0; n_inst];
            for (row, &c) in children.iter().enumerate() {
                let dprice = price_processes[i][c.index()] - price_processes[i][node.index()];
                let dm: f64 = (0..n_inst)
                    .map(|j| beta[j] * (inst[c.index()][j] - inst[node.index()][j]))
                    .sum();
                let dn = dprice - dm;
                hedge[i][c.index()] = hedge[i][node.index()] + dm;
                residual[i][c.index()] = residual[i][node.index()] + dn;
                for (j, o) in orth.iter_mut().enumerate() {
                    *o += weights[row] * dn * (inst[c.index()][j] - inst[node.index()][j]);
                }
            }
            for o in orth {
                orth_residual = orth_residual.max(o.abs());
            }
        }
    }

    let decompositions = (0..m)
        .map(|i| KwClaimDecomposition {
            price_process: price_processes[i].clone(),
            hedge_terminal: tree.leaves().iter().map(|&l| hedge[i][l.index()]).collect(),
            residual_terminal: tree
                .leaves()
                .iter()
                .map(|&l| residual[i][l.index()])
                .collect(),
        })
        .collect();
    Ok(KwDecomposition {
        claims: decompositions,
        initial_prices: price_processes
            .iter()
            .map(|p| p[tree.root().index()])
            .collect(),
        orthogonality_residual: orth_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityMethod {
    /// Closed form through the risk-tolerance numeraire decomposition.
    Formula,
    /// Finite-difference oracle; used when the risk-tolerance wealth process
    /// does not exist.
    OracleFallback,
}

#[derive(Debug, Clone, Copy)]
pub struct SensitivityDiagnostics {
    pub symmetry_gap: f64,
    pub max_eigenvalue: f64,
    pub min_eigenvalue: f64,
}

/// First-order price sensitivities of a family of claims at (x, q = 0).
#[derive(Debug, Clone)]
pub struct SensitivityReport {
    pub claim_labels: Vec<String>,
    /// Davis prices p(x).
    pub davis_prices: Vec<f64>,
    /// Wealth slope p'(x).
    pub wealth_sensitivity: Vec<f64>,
    /// Quantity sensitivity D(x), m x m.
    pub quantity_sensitivity: DMatrix<f64>,
    /// Terminal hedge component per claim (empty rows on the oracle path).
    pub hedge_terminal: Vec<Vec<f64>>,
    /// Terminal orthogonal residual per claim (empty rows on the oracle
    /// path).
    pub residual_terminal: Vec<Vec<f64>>,
    pub diagnostics: SensitivityDiagnostics,
    pub method: SensitivityMethod,
    pub risk_tolerance_exists: bool,
    pub r0: Option<f64>,
    pub replication_residual: f64,
}

fn diagnostics_of(d: &DMatrix<f64>) -> SensitivityDiagnostics {
    let m = d.nrows();
    let mut gap = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            gap = gap.max((d[(i, j)] - d[(j, i)]).abs());
        }
    }
    let sym = (d + d.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    SensitivityDiagnostics {
        symmetry_gap: gap,
        max_eigenvalue: eig.eigenvalues.max(),
        min_eigenvalue: eig.eigenvalues.min(),
    }
}

/// Davis prices, p'(x) and D(x) for the claim family, via the closed form
/// whenever the risk-tolerance wealth process exists, otherwise via the
/// finite-difference oracle (flagged in the report).
pub fn sensitivity(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    claims: &[Claim],
) -> Result<SensitivityReport> {
    let rt = risk_tolerance(model, utility, x)?;
    sensitivity_with_rt(model, utility, x, claims, &rt)
}

pub(crate) fn sensitivity_with_rt(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    claims: &[Claim],
    rt: &RiskToleranceResult,
) -> Result<SensitivityReport> {
    let labels: Vec<String> = claims.iter().map(|c| c.label.clone()).collect();
    let davis = prices_under(&rt.solve.pricing_measure, model, claims);

    if !rt.exists {
        let (p_prime, d) = oracle::sensitivity_fd_robust(model, utility, x, claims)?;
        let diagnostics = diagnostics_of(&d);
        return Ok(SensitivityReport {
            claim_labels: labels,
            davis_prices: davis,
            wealth_sensitivity: p_prime,
            quantity_sensitivity: d,
            hedge_terminal: Vec::new(),
            residual_terminal: Vec::new(),
            diagnostics,
            method: SensitivityMethod::OracleFallback,
            risk_tolerance_exists: false,
            r0: None,
            replication_residual: rt.replication_residual,
        });
    }

    // p'(x): Richardson-refined central differences of the Davis price.
    let step = PRICE_SLOPE_STEP * x;
    let price_at = |xx: f64| -> Result<Vec<f64>> { davis_price(model, utility, xx, claims) };
    let pp1 = price_at(x + step)?;
    let pm1 = price_at(x - step)?;
    let pp2 = price_at(x + 0.5 * step)?;
    let pm2 = price_at(x - 0.5 * step)?;
    let wealth_sensitivity: Vec<f64> = (0..claims.len())
        .map(|i| {
            let d_h = (pp1[i] - pm1[i]) / (2.0 * step);
            let d_h2 = (pp2[i] - pm2[i]) / step;
            (4.0 * d_h2 - d_h) / 3.0
        })
        .collect();

    let kw = kw_decomposition(model, rt, claims)?;
    let (u1, u2) = solver::value_derivatives(model, utility, x)?;
    let qr = rt.measure.as_ref().expect("exists");
    let m = claims.len();
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let cross = qr.expectation(
                model.tree(),
                &kw.claims[i]
                    .residual_terminal
                    .iter()
                    .zip(&kw.claims[j].residual_terminal)
                    .map(|(&a, &b)| a * b)
                    .collect::<Vec<_>>(),
            );
            let value = u2 / u1 * cross;
            d[(i, j)] = value;
            d[(j, i)] = value;
        }
    }

    let diagnostics = diagnostics_of(&d);
    Ok(SensitivityReport {
        claim_labels: labels,
        davis_prices: davis,
        wealth_sensitivity,
        quantity_sensitivity: d,
        hedge_terminal: kw.claims.iter().map(|c| c.hedge_terminal.clone()).collect(),
        residual_terminal: kw
            .claims
            .iter()
            .map(|c| c.residual_terminal.clone())
            .collect(),
        diagnostics,
        method: SensitivityMethod::Formula,
        risk_tolerance_exists: true,
        r0: rt.r0,
        replication_residual: rt.replication_residual,
    })
}

/// Quadratic-order optimality check of the extra-wealth direction
/// Phi = R_T / R_0.
#[derive(Debug, Clone)]
pub struct TaylorCheck {
    pub step_coarse: f64,
    pub step_fine: f64,
    /// u(x + dx) - E[U(X_T + dx Phi)] at the two steps; nonnegative and
    /// vanishing faster than dx^2.
    pub gap_coarse: f64,
    pub gap_fine: f64,
    /// Resolution below which the gaps are pure roundoff.
    pub noise_floor: f64,
    /// E[Phi^2 / R_T] under the pricing measure for Phi = R_T/R_0.
    pub phi_objective: f64,
    /// Theoretical minimum 1/R_0 of that objective.
    pub inverse_r0: f64,
    /// Smallest objective among the sampled feasible competitors.
    pub best_competitor: f64,
    /// Largest utility advantage any competitor achieves over Phi at the
    /// coarse step.
    pub best_competitor_advantage: f64,
    pub competitor_count: usize,
}

/// Tests that investing marginal wealth along R/R_0 is optimal to second
/// order: compares E[U(X_T + dx Phi)] with u(x + dx) at two step sizes and
/// pits Phi against random feasible competitors normalized to unit price.
pub fn taylor_check(
    model: &MarketModel,
    utility: UtilityFunction,
    x: f64,
    dx: f64,
    competitors: usize,
    rng: &mut impl Rng,
) -> Result<TaylorCheck> {
    if !(dx > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need a positive wealth increment, got {dx}"
        )));
    }
    let rt = risk_tolerance(model, utility, x)?;
    if !rt.exists {
        return Err(Error::RiskToleranceUnavailable {
            gap: rt.replication_residual,
        });
    }
    let tree = model.tree();
    let r0 = rt.r0.expect("exists");
    let phi: Vec<f64> = rt.target.iter().map(|&rho| rho / r0).collect();
    let w = &rt.solve.endowed_terminal;
    let pleaf = tree.leaf_probabilities();
    let qhat = rt.solve.pricing_measure.leaf_probs(tree);

    let expected_utility = |direction: &[f64], step: f64| -> Result<f64> {
        let mut acc = 0.0;
        for ((&wl, &dl), &p) in w.iter().zip(direction).zip(&pleaf) {
            let wealth = wl + step * dl;
            if !(wealth > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "wealth increment {step} too large: terminal wealth {wealth} at some leaf"
                )));
            }
            acc += p * utility.value(wealth);
        }
        Ok(acc)
    };

    let mut gaps = [0.0f64; 2];
    let steps = [dx, dx / 10.0];
    for (slot, &step) in steps.iter().enumerate() {
        let exact = solver::solve_primal(model, utility, x + step, &[], &[])?.value;
        gaps[slot] = exact - expected_utility(&phi, step)?;
    }

    // E[Phi^2 / R_T] under the pricing measure; competitors must also price
    // at one unit of initial capital, i.e. have unit expectation there.
    let objective = |direction: &[f64]| -> f64 {
        direction
            .iter()
            .zip(&rt.target)
            .zip(&qhat)
            .map(|((&d, &rho), &q)| q * d * d / rho)
            .sum()
    };
    let phi_objective = objective(&phi);

    let utility_phi_coarse = expected_utility(&phi, dx)?;
    let mut best_competitor = f64::INFINITY;
    let mut best_advantage = f64::NEG_INFINITY;
    let mut count = 0;
    // The savings account is always among the competitors.
    let mut candidates = vec![vec![1.0; phi.len()]];
    for _ in 1..competitors.max(1) {
        let raw: Vec<f64> = phi.iter().map(|_| rng.random_range(0.25..4.0)).collect();
        candidates.push(raw);
    }
    for raw in candidates {
        let price: f64 = raw.iter().zip(&qhat).map(|(&v, &q)| q * v).sum();
        let candidate: Vec<f64> = raw.iter().map(|&v| v / price).collect();
        best_competitor = best_competitor.min(objective(&candidate));
        let adv = expected_utility(&candidate, dx)? - utility_phi_coarse;
        best_advantage = best_advantage.max(adv);
        count += 1;
    }

    let scale = rt.solve.value.abs().max(1.0);
    Ok(TaylorCheck {
        step_coarse: dx,
        step_fine: dx / 10.0,
        gap_coarse: gaps[0],
        gap_fine: gaps[1],
        noise_floor: 1e-12 * scale,
        phi_objective,
        inverse_r0: 1.0 / r0,
        best_competitor,
        best_competitor_advantage: best_advantage,
        competitor_count: count,
    })
}

/// Solution of the linearized equilibrium system.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub quantities: Vec<f64>,
    /// True when the system matrix was singular and a negative-definite
    /// regularization picked the solution (positions along replicable
    /// directions are then scale-limited by the regularization, not by the
    /// market).
    pub regularized: bool,
    /// Residual of the linear system at the returned solution.
    pub residual: f64,
}

/// Solves p_trade = p(x) + p'(x) (-<p_trade, q>) + D q for the position q.
///
/// Singular systems (replicable claim combinations make D rank-deficient)
/// are solved by shifting the non-negative eigenvalues of the symmetrized
/// matrix to a small negative value, which preserves negative definiteness
/// and so keeps the trade direction consistent with sign(p(x) - p_trade).
pub fn linearized_equilibrium(
    report: &SensitivityReport,
    trade_prices: &[f64],
) -> Result<EquilibriumSolution> {
    let m = report.davis_prices.len();
    if trade_prices.len() != m {
        return Err(Error::InvalidArgument(format!(
            "{} trade prices for {} claims",
            trade_prices.len(),
            m
        )));
    }
    let d = &report.quantity_sensitivity;
    let p_prime = DVector::from_column_slice(&report.wealth_sensitivity);
    let p_trade = DVector::from_column_slice(trade_prices);
    let rhs = &p_trade - DVector::from_column_slice(&report.davis_prices);
    let system = d - &p_prime * p_trade.transpose();

    let gram = system.transpose() * &system;
    let gram_eig = gram.symmetric_eigen();
    let smax = gram_eig.eigenvalues.max().max(0.0).sqrt();
    let smin = gram_eig.eigenvalues.min().max(0.0).sqrt();
    // Entries below the finite-difference noise floor of p'(x) are
    // indistinguishable from zero; route them to the regularized branch so
    // the trade direction stays governed by negative definiteness.
    if smin > 1e-7 * smax.max(1.0) {
        let q = system
            .clone()
            .full_piv_lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("equilibrium solve failed".into()))?;
        let residual = (&system * &q - &rhs).amax();
        return Ok(EquilibriumSolution {
            quantities: q.iter().copied().collect(),
            regularized: false,
            residual,
        });
    }

    let sym = (&system + system.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lam_scale = eig.eigenvalues.amax().max(1.0);
    let shift = -1e-6 * lam_scale;
    let mut q = DVector::zeros(m);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let lam_eff = lam.min(shift);
        let v = eig.eigenvectors.column(k).clone_owned();
        let coef = v.dot(&rhs) / lam_eff;
        q.axpy(coef, &v, 1.0);
    }
    let residual = (&system * &q - &rhs).amax();
    Ok(EquilibriumSolution {
        quantities: q.iter().copied().collect(),
        regularized: true,
        residual,
    })
}
