//! JSON report schema.
//!
//! Reports are the single source of truth for command output: the
//! human-readable console rendering is derived from these structures, never
//! computed separately. Serialization is deterministic: struct field order is
//! fixed, leaf-indexed data is emitted as arrays in leaf order, and every
//! float is rounded to 12 significant digits before encoding, so identical
//! inputs and seed produce byte-identical files.

use serde::Serialize;

/// Rounds to 12 significant digits; keeps NaN/inf as-is.
pub fn sig12(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.11e}").parse().unwrap_or(x)
    } else {
        x
    }
}

pub fn sig12_vec(v: &[f64]) -> Vec<f64> {
    v.iter().copied().map(sig12).collect()
}

pub fn sig12_mat(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| sig12(m[(i, j)])).collect())
        .collect()
}

/// A numeric result tagged with the computation path that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct Tagged<T> {
    pub value: T,
    pub method: &'static str,
}

impl<T> Tagged<T> {
    pub fn formula(value: T) -> Self {
        Tagged {
            value,
            method: "formula",
        }
    }

    pub fn oracle(value: T) -> Self {
        Tagged {
            value,
            method: "oracle",
        }
    }
}

/// One value per terminal node, labeled for readability.
#[derive(Debug, Clone, Serialize)]
pub struct LeafValue {
    pub node: String,
    pub value: f64,
}

pub fn leaf_values(model: &imp_core::MarketModel, values: &[f64]) -> Vec<LeafValue> {
    model
        .tree()
        .leaves()
        .iter()
        .zip(values)
        .map(|(&l, &v)| LeafValue {
            node: model.tree().node(l).label.clone(),
            value: sig12(v),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsJson {
    pub symmetry_gap: f64,
    pub max_eigenvalue: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskToleranceJson {
    pub exists: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    /// Superreplication gap of the risk-tolerance target.
    pub replication_residual: f64,
    /// Extra-wealth investment direction R_T/R_0 per leaf, when it exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<LeafValue>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleDeltaJson {
    pub wealth_sensitivity: Tagged<Vec<f64>>,
    pub quantity_sensitivity: Tagged<Vec<Vec<f64>>>,
    /// Max absolute disagreement between the two quantity-sensitivity paths.
    pub max_delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingsJson {
    pub total_ms: f64,
    pub detail: Vec<(String, f64)>,
}

/// Output of `imp sensitivity` (and embedded in `imp report`).
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityJson {
    pub model_digest: String,
    pub utility: serde_json::Value,
    pub x: f64,
    pub seed: u64,
    pub claims: Vec<String>,
    pub davis_prices: Tagged<Vec<f64>>,
    pub wealth_sensitivity: Tagged<Vec<f64>>,
    pub quantity_sensitivity: Tagged<Vec<Vec<f64>>>,
    pub diagnostics: DiagnosticsJson,
    pub risk_tolerance: RiskToleranceJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleDeltaJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<TimingsJson>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PriceJson {
    pub model_digest: String,
    pub utility: serde_json::Value,
    pub x: f64,
    pub claims: Vec<String>,
    pub davis_prices: Tagged<Vec<f64>>,
    /// Pricing-measure weight per terminal node.
    pub pricing_measure: Vec<LeafValue>,
    pub marginal_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumJson {
    pub model_digest: String,
    pub utility: serde_json::Value,
    pub x: f64,
    pub claims: Vec<String>,
    pub davis_prices: Tagged<Vec<f64>>,
    pub trade_prices: Vec<f64>,
    pub quantities: Vec<f64>,
    /// True when a singular system was solved by negative-definite
    /// regularization (positions are directionally meaningful only).
    pub regularized: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DominanceJson {
    pub model_digest: String,
    pub utility: serde_json::Value,
    pub x: f64,
    pub seed: u64,
    pub candidate: Vec<LeafValue>,
    pub verdict: String,
    pub dominated_set: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation_source: Option<String>,
    pub cross_utility_consistent: bool,
}

/// Output of `imp report`: the practitioner bundle (pricing measure,
/// relative risk aversion, extra-dollar direction) plus sensitivities,
/// dominance verdicts and oracle deltas.
#[derive(Debug, Clone, Serialize)]
pub struct ReportJson {
    pub model_digest: String,
    pub utility: serde_json::Value,
    pub x: f64,
    pub seed: u64,
    pub claims: Vec<String>,
    pub pricing_measure: Vec<LeafValue>,
    pub relative_risk_aversion: f64,
    pub davis_prices: Tagged<Vec<f64>>,
    pub risk_tolerance: RiskToleranceJson,
    pub wealth_sensitivity: Tagged<Vec<f64>>,
    pub quantity_sensitivity: Tagged<Vec<Vec<f64>>>,
    pub diagnostics: DiagnosticsJson,
    pub oracle: OracleDeltaJson,
    pub dominance: DominanceSummaryJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<TimingsJson>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DominanceSummaryJson {
    pub verdict: String,
    pub dominated_set: String,
    pub cross_utility_consistent: bool,
}
