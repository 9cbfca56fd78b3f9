//! `imp`: utility-based pricing of non-traded claims on finite event trees.
//!
//! Subcommands: validate | price | sensitivity | equilibrium | dominance |
//! report. Exit codes: 0 success, 1 schema/usage/numerical failure,
//! 2 arbitrage. Logging via the IMP_LOG_LEVEL environment variable.

mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use imp_core::dominance::{check_universal_minimal, cross_utility_consistency, DominanceVerdict};
use imp_core::market::{check_no_arbitrage, LoadedModel};
use imp_core::oracle::{self, OracleConfig};
use imp_core::pricing;
use imp_core::solver;
use imp_core::utility::UtilityFunction;
use imp_core::{Error as CoreError, MarketModel, WealthProcess};

use report::{
    leaf_values, sig12, sig12_mat, sig12_vec, DiagnosticsJson, DominanceJson, DominanceSummaryJson,
    EquilibriumJson, OracleDeltaJson, PriceJson, ReportJson, RiskToleranceJson, SensitivityJson,
    Tagged, TimingsJson,
};

#[derive(Parser)]
#[command(
    name = "imp",
    version,
    about = "Utility-based pricing of non-traded claims on finite event trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Formula,
    Oracle,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model file and check the market for arbitrage.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Davis prices of the model's claims under the chosen preferences.
    Price {
        #[arg(long)]
        model: PathBuf,
        /// Utility spec, e.g. '{"kind":"log"}' or '{"kind":"power","gamma":0.5}'.
        #[arg(long)]
        utility: String,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Price sensitivities p(x), p'(x) and D(x), optionally cross-checked
    /// against the finite-difference oracle.
    Sensitivity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        utility: String,
        #[arg(long)]
        x: f64,
        #[arg(long, value_enum, default_value_t = Method::Formula)]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Flat CSV with one row per claim pair of the D matrix.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Plot-ready CSV of per-claim q vs. linearized price curves.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the oracle quantity step (skips its step-robustness gate).
        #[arg(long)]
        fd_step: Option<f64>,
        /// Include wall-clock timings (breaks byte-reproducibility).
        #[arg(long)]
        timings: bool,
    },
    /// Linearized equilibrium position for given trade prices.
    Equilibrium {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        utility: String,
        #[arg(long)]
        x: f64,
        /// Comma-separated trade prices, one per claim.
        #[arg(long, value_delimiter = ',')]
        p_trade: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Second-order-dominance universality of the pricing measure.
    Dominance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        utility: String,
        #[arg(long)]
        x: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full report: pricing measure, risk aversion, extra-dollar direction,
    /// sensitivities with oracle deltas, dominance verdicts.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        utility: String,
        #[arg(long)]
        x: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        timings: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("IMP_LOG_LEVEL")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Arbitrage(_) => 2,
        _ => 1,
    }
}

fn run(command: Command) -> Result<(), CoreError> {
    match command {
        Command::Validate { model } => cmd_validate(&model),
        Command::Price {
            model,
            utility,
            x,
            out,
        } => cmd_price(&model, &utility, x, out.as_deref()),
        Command::Sensitivity {
            model,
            utility,
            x,
            method,
            out,
            csv,
            curve,
            seed,
            fd_step,
            timings,
        } => cmd_sensitivity(
            &model,
            &utility,
            x,
            method,
            out.as_deref(),
            csv.as_deref(),
            curve.as_deref(),
            seed,
            fd_step,
            timings,
        ),
        Command::Equilibrium {
            model,
            utility,
            x,
            p_trade,
            out,
        } => cmd_equilibrium(&model, &utility, x, &p_trade, out.as_deref()),
        Command::Dominance {
            model,
            utility,
            x,
            samples,
            seed,
            out,
        } => cmd_dominance(&model, &utility, x, samples, seed, out.as_deref()),
        Command::Report {
            model,
            utility,
            x,
            seed,
            out,
            timings,
        } => cmd_report(&model, &utility, x, seed, out.as_deref(), timings),
    }
}

fn parse_utility(spec: &str) -> Result<UtilityFunction, CoreError> {
    let u: UtilityFunction = serde_json::from_str(spec)
        .map_err(|e| CoreError::InvalidArgument(format!("bad utility spec '{spec}': {e}")))?;
    u.validate()?;
    Ok(u)
}

fn load(path: &Path) -> Result<(LoadedModel, String), CoreError> {
    let bytes = std::fs::read(path)?;
    let digest: String = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let text = String::from_utf8(bytes)
        .map_err(|e| CoreError::Parse(format!("model file is not UTF-8: {e}")))?;
    let loaded = imp_core::market::load_model_str(&text)?;
    Ok((loaded, digest))
}

fn emit(json: &impl serde::Serialize, out: Option<&Path>) -> Result<(), CoreError> {
    let text = serde_json::to_string_pretty(json)
        .map_err(|e| CoreError::Internal(format!("serialization failed: {e}")))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn print_strategy(model: &MarketModel, strategy: &imp_core::Strategy) {
    let tree = model.tree();
    for &node in tree.internal_nodes() {
        let h = strategy.at(tree, node);
        let pairs: Vec<String> = model
            .asset_names()
            .iter()
            .zip(h)
            .map(|(name, q)| format!("{name}={q:.6}"))
            .collect();
        println!("  node '{}': {}", tree.node(node).label, pairs.join(", "));
    }
}

fn cmd_validate(path: &Path) -> Result<(), CoreError> {
    let (loaded, digest) = load(path)?;
    println!(
        "model ok: {} nodes, {} periods, {} asset(s), {} claim(s) [sha256 {}]",
        loaded.model.tree().len(),
        loaded.model.tree().periods(),
        loaded.model.asset_count(),
        loaded.claims.len(),
        &digest[..12]
    );
    let check = check_no_arbitrage(&loaded.model)?;
    if check.arbitrage_free {
        let witness = check.witness.expect("present when arbitrage-free");
        println!(
            "arbitrage-free: interior martingale measure with min leaf probability {:.6e}",
            witness.min_leaf_prob(loaded.model.tree())
        );
        Ok(())
    } else {
        if let Some(strategy) = &check.arbitrage_strategy {
            println!("arbitrage found; witness strategy (zero initial capital):");
            print_strategy(&loaded.model, strategy);
            let gains = WealthProcess::from_strategy(&loaded.model, 0.0, strategy.clone());
            let terminal = gains.terminal(loaded.model.tree());
            println!("  terminal gains: {terminal:?}");
        } else {
            println!(
                "no equivalent martingale measure (boundary-degenerate, best min leaf probability {:.3e})",
                check.min_leaf_probability
            );
        }
        Err(CoreError::Arbitrage("validation failed".into()))
    }
}

fn cmd_price(path: &Path, utility: &str, x: f64, out: Option<&Path>) -> Result<(), CoreError> {
    let (loaded, digest) = load(path)?;
    let u = parse_utility(utility)?;
    let solve = solver::solve_primal(&loaded.model, u, x, &[], &[])?;
    let prices: Vec<f64> = loaded
        .claims
        .iter()
        .map(|c| {
            solve
                .pricing_measure
                .expectation(loaded.model.tree(), c.payoffs())
        })
        .collect();
    let json = PriceJson {
        model_digest: digest,
        utility: serde_json::to_value(u).expect("utility serializes"),
        x: sig12(x),
        claims: loaded.claims.iter().map(|c| c.label.clone()).collect(),
        davis_prices: Tagged::formula(sig12_vec(&prices)),
        pricing_measure: leaf_values(
            &loaded.model,
            &solve.pricing_measure.leaf_probs(loaded.model.tree()),
        ),
        marginal_value: sig12(solve.dual_variable),
    };
    emit(&json, out)
}

struct SensitivityBundle {
    report: pricing::SensitivityReport,
    oracle: Option<OracleDeltaJson>,
    timings: Vec<(String, f64)>,
}

fn compute_sensitivity(
    loaded: &LoadedModel,
    u: UtilityFunction,
    x: f64,
    method: Method,
    fd_step: Option<f64>,
) -> Result<SensitivityBundle, CoreError> {
    let mut timings = Vec::new();
    let t0 = Instant::now();
    let report = match method {
        Method::Oracle => {
            let (p_prime, d) = run_oracle(loaded, u, x, fd_step)?;
            oracle_only_report(loaded, u, x, p_prime, d)?
        }
        _ => pricing::sensitivity(&loaded.model, u, x, &loaded.claims)?,
    };
    timings.push(("sensitivity".into(), ms(t0)));

    let oracle = if method == Method::Both {
        let t1 = Instant::now();
        let (p_prime_o, d_o) = run_oracle(loaded, u, x, fd_step)?;
        timings.push(("oracle".into(), ms(t1)));
        let mut max_delta = 0.0f64;
        for i in 0..d_o.nrows() {
            for j in 0..d_o.ncols() {
                max_delta =
                    max_delta.max((d_o[(i, j)] - report.quantity_sensitivity[(i, j)]).abs());
            }
        }
        Some(OracleDeltaJson {
            wealth_sensitivity: Tagged::oracle(sig12_vec(&p_prime_o)),
            quantity_sensitivity: Tagged::oracle(sig12_mat(&d_o)),
            max_delta: sig12(max_delta),
        })
    } else {
        None
    };
    Ok(SensitivityBundle {
        report,
        oracle,
        timings,
    })
}

fn run_oracle(
    loaded: &LoadedModel,
    u: UtilityFunction,
    x: f64,
    fd_step: Option<f64>,
) -> Result<(Vec<f64>, nalgebra::DMatrix<f64>), CoreError> {
    match fd_step {
        Some(step) => {
            log::warn!("fd-step override {step}: the step-robustness gate is skipped");
            oracle::sensitivity_fd(
                &loaded.model,
                u,
                x,
                &loaded.claims,
                &OracleConfig::with_step_q(step),
            )
        }
        None => oracle::sensitivity_fd_robust(&loaded.model, u, x, &loaded.claims),
    }
}

/// Builds a report carrying oracle numbers in the formula slots, for
/// `--method=oracle`.
fn oracle_only_report(
    loaded: &LoadedModel,
    u: UtilityFunction,
    x: f64,
    p_prime: Vec<f64>,
    d: nalgebra::DMatrix<f64>,
) -> Result<pricing::SensitivityReport, CoreError> {
    let davis = pricing::davis_price(&loaded.model, u, x, &loaded.claims)?;
    let rt = pricing::risk_tolerance(&loaded.model, u, x)?;
    let m = d.nrows();
    let mut gap = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            gap = gap.max((d[(i, j)] - d[(j, i)]).abs());
        }
    }
    let sym = (&d + d.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    Ok(pricing::SensitivityReport {
        claim_labels: loaded.claims.iter().map(|c| c.label.clone()).collect(),
        davis_prices: davis,
        wealth_sensitivity: p_prime,
        quantity_sensitivity: d,
        hedge_terminal: Vec::new(),
        residual_terminal: Vec::new(),
        diagnostics: pricing::SensitivityDiagnostics {
            symmetry_gap: gap,
            max_eigenvalue: eig.eigenvalues.max(),
            min_eigenvalue: eig.eigenvalues.min(),
        },
        method: pricing::SensitivityMethod::OracleFallback,
        risk_tolerance_exists: rt.exists,
        r0: rt.r0,
        replication_residual: rt.replication_residual,
    })
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn method_tag(report: &pricing::SensitivityReport) -> &'static str {
    match report.method {
        pricing::SensitivityMethod::Formula => "formula",
        pricing::SensitivityMethod::OracleFallback => "oracle",
    }
}

fn risk_tolerance_json(
    loaded: &LoadedModel,
    report: &pricing::SensitivityReport,
    direction: Option<Vec<f64>>,
) -> RiskToleranceJson {
    RiskToleranceJson {
        exists: report.risk_tolerance_exists,
        r0: report.r0.map(sig12),
        replication_residual: sig12(report.replication_residual),
        direction: direction.map(|d| leaf_values(&loaded.model, &d)),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sensitivity(
    path: &Path,
    utility: &str,
    x: f64,
    method: Method,
    out: Option<&Path>,
    csv: Option<&Path>,
    curve: Option<&Path>,
    seed: u64,
    fd_step: Option<f64>,
    timings: bool,
) -> Result<(), CoreError> {
    let t0 = Instant::now();
    let (loaded, digest) = load(path)?;
    let u = parse_utility(utility)?;
    if loaded.claims.is_empty() {
        return Err(CoreError::InvalidArgument(
            "model file declares no claims to price".into(),
        ));
    }
    let bundle = compute_sensitivity(&loaded, u, x, method, fd_step)?;
    let report = &bundle.report;
    let tag = method_tag(report);

    let json = SensitivityJson {
        model_digest: digest,
        utility: serde_json::to_value(u).expect("utility serializes"),
        x: sig12(x),
        seed,
        claims: report.claim_labels.clone(),
        davis_prices: Tagged {
            value: sig12_vec(&report.davis_prices),
            method: tag,
        },
        wealth_sensitivity: Tagged {
            value: sig12_vec(&report.wealth_sensitivity),
            method: tag,
        },
        quantity_sensitivity: Tagged {
            value: sig12_mat(&report.quantity_sensitivity),
            method: tag,
        },
        diagnostics: DiagnosticsJson {
            symmetry_gap: sig12(report.diagnostics.symmetry_gap),
            max_eigenvalue: sig12(report.diagnostics.max_eigenvalue),
            min_eigenvalue: sig12(report.diagnostics.min_eigenvalue),
        },
        risk_tolerance: risk_tolerance_json(&loaded, report, None),
        oracle: bundle.oracle.clone(),
        timings: timings.then(|| TimingsJson {
            total_ms: ms(t0),
            detail: bundle.timings.clone(),
        }),
    };
    emit(&json, out)?;

    if let Some(csv_path) = csv {
        let mut text = String::from("claim_i,claim_j,label_i,label_j,d,method\n");
        let m = report.claim_labels.len();
        for i in 0..m {
            for j in 0..m {
                text.push_str(&format!(
                    "{i},{j},{},{},{},{tag}\n",
                    report.claim_labels[i],
                    report.claim_labels[j],
                    sig12(report.quantity_sensitivity[(i, j)])
                ));
            }
        }
        if let Some(o) = &bundle.oracle {
            for i in 0..m {
                for j in 0..m {
                    text.push_str(&format!(
                        "{i},{j},{},{},{},oracle\n",
                        report.claim_labels[i],
                        report.claim_labels[j],
                        o.quantity_sensitivity.value[i][j]
                    ));
                }
            }
        }
        std::fs::write(csv_path, text)?;
    }

    if let Some(curve_path) = curve {
        // Per-claim linearized price against its own position, other
        // positions held at zero.
        let mut text = String::from("claim,q,price_linear\n");
        for (i, label) in report.claim_labels.iter().enumerate() {
            let p = report.davis_prices[i];
            let d = report.quantity_sensitivity[(i, i)];
            let qmax = if d.abs() > 1e-12 {
                (0.5 * p.abs().max(0.1) / d.abs()).min(50.0)
            } else {
                1.0
            };
            for k in 0..=40 {
                let q = -qmax + 2.0 * qmax * (k as f64) / 40.0;
                text.push_str(&format!("{label},{},{}\n", sig12(q), sig12(p + d * q)));
            }
        }
        std::fs::write(curve_path, text)?;
    }
    Ok(())
}

fn cmd_equilibrium(
    path: &Path,
    utility: &str,
    x: f64,
    p_trade: &[f64],
    out: Option<&Path>,
) -> Result<(), CoreError> {
    let (loaded, digest) = load(path)?;
    let u = parse_utility(utility)?;
    let report = pricing::sensitivity(&loaded.model, u, x, &loaded.claims)?;
    let solution = pricing::linearized_equilibrium(&report, p_trade)?;
    if solution.regularized {
        log::warn!(
            "singular sensitivity system; returned a regularized direction (residual {:.3e})",
            solution.residual
        );
    }
    let json = EquilibriumJson {
        model_digest: digest,
        utility: serde_json::to_value(u).expect("utility serializes"),
        x: sig12(x),
        claims: report.claim_labels.clone(),
        davis_prices: Tagged::formula(sig12_vec(&report.davis_prices)),
        trade_prices: sig12_vec(p_trade),
        quantities: sig12_vec(&solution.quantities),
        regularized: solution.regularized,
        residual: sig12(solution.residual),
    };
    emit(&json, out)
}

fn verdict_str(v: DominanceVerdict) -> String {
    match v {
        DominanceVerdict::Universal => "universal",
        DominanceVerdict::NotUniversal => "not-universal",
        DominanceVerdict::Inconclusive => "inconclusive",
    }
    .to_string()
}

fn cmd_dominance(
    path: &Path,
    utility: &str,
    x: f64,
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CoreError> {
    let (loaded, digest) = load(path)?;
    let u = parse_utility(utility)?;
    let solve = solver::solve_primal(&loaded.model, u, x, &[], &[])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dominance =
        check_universal_minimal(&loaded.model, &solve.pricing_measure, samples, &mut rng)?;
    let consistent = cross_utility_consistency(&loaded.model, x)?;
    let json = DominanceJson {
        model_digest: digest,
        utility: serde_json::to_value(u).expect("utility serializes"),
        x: sig12(x),
        seed,
        candidate: leaf_values(
            &loaded.model,
            &solve.pricing_measure.leaf_probs(loaded.model.tree()),
        ),
        verdict: verdict_str(dominance.verdict),
        dominated_set: dominance.dominated_set.clone(),
        violation_source: dominance.violation.map(|v| v.source),
        cross_utility_consistent: consistent,
    };
    emit(&json, out)
}

fn cmd_report(
    path: &Path,
    utility: &str,
    x: f64,
    seed: u64,
    out: Option<&Path>,
    timings: bool,
) -> Result<(), CoreError> {
    let t0 = Instant::now();
    let (loaded, digest) = load(path)?;
    let u = parse_utility(utility)?;

    let solve = solver::solve_primal(&loaded.model, u, x, &[], &[])?;
    let (u1, u2) = solver::value_derivatives(&loaded.model, u, x)?;
    let bundle = compute_sensitivity(&loaded, u, x, Method::Both, None)?;
    let report = &bundle.report;

    let rt = pricing::risk_tolerance(&loaded.model, u, x)?;
    let direction = rt
        .r0
        .map(|r0| rt.target.iter().map(|&rho| rho / r0).collect::<Vec<f64>>());

    let t_dom = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dominance = check_universal_minimal(&loaded.model, &solve.pricing_measure, 200, &mut rng)?;
    let consistent = cross_utility_consistency(&loaded.model, x)?;
    let mut detail = bundle.timings.clone();
    detail.push(("dominance".into(), ms(t_dom)));

    let json = ReportJson {
        model_digest: digest,
        utility: serde_json::to_value(u).expect("utility serializes"),
        x: sig12(x),
        seed,
        claims: report.claim_labels.clone(),
        pricing_measure: leaf_values(
            &loaded.model,
            &solve.pricing_measure.leaf_probs(loaded.model.tree()),
        ),
        relative_risk_aversion: sig12(-x * u2 / u1),
        davis_prices: Tagged::formula(sig12_vec(&report.davis_prices)),
        risk_tolerance: risk_tolerance_json(&loaded, report, direction),
        wealth_sensitivity: Tagged::formula(sig12_vec(&report.wealth_sensitivity)),
        quantity_sensitivity: Tagged::formula(sig12_mat(&report.quantity_sensitivity)),
        diagnostics: DiagnosticsJson {
            symmetry_gap: sig12(report.diagnostics.symmetry_gap),
            max_eigenvalue: sig12(report.diagnostics.max_eigenvalue),
            min_eigenvalue: sig12(report.diagnostics.min_eigenvalue),
        },
        oracle: bundle.oracle.clone().expect("method=both fills oracle"),
        dominance: DominanceSummaryJson {
            verdict: verdict_str(dominance.verdict),
            dominated_set: dominance.dominated_set.clone(),
            cross_utility_consistent: consistent,
        },
        timings: timings.then(|| TimingsJson {
            total_ms: ms(t0),
            detail,
        }),
    };
    emit(&json, out)
}
