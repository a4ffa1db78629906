use serde::{Deserialize, Serialize};

use super::{
    aggregate_importance, median_bandwidth, protodash, shapley_exact, shapley_sampled, summarize_prototypes,
    Attribution, ExplainConfig, ExplainError, FeatureImportance, KernelSpec, PrototypeSet, PrototypeSummary,
};
use crate::cohort::{CcsMap, FeatureMatrix};
use crate::risk::{ModelKind, Predictor, RiskModel, Split};

/// One selected prototype, tied back to its patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prototype {
    pub patient_id: String,
    pub weight: f64,
    pub risk: f64,
}

/// Everything the explain stage produces for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationSet {
    pub model_kind: ModelKind,
    pub config: ExplainConfig,
    pub feature_names: Vec<String>,
    /// Per-feature training-set means.
    pub reference: Vec<f64>,
    /// Test patients at or above the risk threshold, in matrix order.
    pub pool: Vec<String>,
    /// Indices in `prototype_set` point into `pool`.
    pub prototype_set: PrototypeSet,
    pub prototypes: Vec<Prototype>,
    /// One per prototype, same order.
    pub attributions: Vec<Attribution>,
    pub aggregate: Vec<FeatureImportance>,
    pub summary: PrototypeSummary,
}

impl ExplanationSet {
    pub fn attribution_for(&self, patient_id: &str) -> Option<&Attribution> {
        self.attributions.iter().find(|a| a.patient_id == patient_id)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("explanations serialise");
        v.push(b'\n');
        v
    }
}

/// Shapley attribution of one input: exact enumeration up to the
/// configured cap, permutation sampling beyond it.
pub fn attribute(
    model: &RiskModel,
    patient_id: &str,
    x: &[f64],
    reference: &[f64],
    cfg: &ExplainConfig,
) -> Result<Attribution, ExplainError> {
    let values = if model.width() <= cfg.exact_cap {
        shapley_exact(model, x, reference, None, cfg.exact_cap)?
    } else {
        shapley_sampled(model, x, reference, None, cfg.n_samples, cfg.seed)?
    };
    Attribution::new(patient_id, model.feature_names.clone(), x.to_vec(), values)
}

fn bandwidth(rows: &[&[f64]], cfg: &ExplainConfig) -> f64 {
    let bw = cfg.bandwidth.unwrap_or_else(|| median_bandwidth(rows));
    // A pool of identical rows has zero median distance.
    if bw > 0.0 {
        bw
    } else {
        1.0
    }
}

/// ProtoDash over the pool rows with `k` capped at the pool size.
pub fn select_prototypes(pool_rows: &[&[f64]], k: usize, cfg: &ExplainConfig) -> Result<PrototypeSet, ExplainError> {
    let kernel = KernelSpec::rbf(bandwidth(pool_rows, cfg));
    protodash(pool_rows, pool_rows, k.min(pool_rows.len()), &kernel)
}

/// Builds the high-risk pool from the test split, selects prototypes,
/// attributes each one and summarises them.
pub fn explain_cohort(
    model: &RiskModel,
    matrix: &FeatureMatrix,
    split: &Split,
    ccs_map: &CcsMap,
    cfg: &ExplainConfig,
) -> Result<ExplanationSet, ExplainError> {
    cfg.validate()?;
    if model.feature_names != matrix.feature_names {
        return Err(ExplainError::Input("model and feature matrix disagree on feature names".into()));
    }
    if split.train.is_empty() {
        return Err(ExplainError::Input("split has no training rows".into()));
    }
    let reference = matrix.column_means(&split.train);
    let mut test = split.test.clone();
    test.sort_unstable();
    let pool_idx: Vec<usize> =
        test.into_iter().filter(|&i| model.predict(&matrix.rows[i]) >= cfg.risk_threshold).collect();
    if pool_idx.is_empty() {
        return Err(ExplainError::Input(format!(
            "no test patient has predicted risk at or above {}",
            cfg.risk_threshold
        )));
    }
    let pool_rows: Vec<&[f64]> = pool_idx.iter().map(|&i| matrix.rows[i].as_slice()).collect();
    let prototype_set = select_prototypes(&pool_rows, cfg.k, cfg)?;

    let mut prototypes = Vec::new();
    let mut attributions = Vec::new();
    for (&p, &w) in prototype_set.indices.iter().zip(&prototype_set.weights) {
        let row = pool_idx[p];
        let id = &matrix.patient_ids[row];
        let x = &matrix.rows[row];
        prototypes.push(Prototype { patient_id: id.clone(), weight: w, risk: model.predict(x) });
        attributions.push(attribute(model, id, x, &reference, cfg)?);
    }
    let aggregate = aggregate_importance(&attributions, cfg.top_n)?;
    let proto_rows: Vec<&[f64]> = prototype_set.indices.iter().map(|&p| pool_rows[p]).collect();
    let summary = summarize_prototypes(&proto_rows, matrix, ccs_map, cfg.prevalence_cutoff)?;
    log::info!("explained {} prototypes from a pool of {}", prototypes.len(), pool_idx.len());

    Ok(ExplanationSet {
        model_kind: model.kind,
        config: cfg.clone(),
        feature_names: matrix.feature_names.clone(),
        reference,
        pool: pool_idx.iter().map(|&i| matrix.patient_ids[i].clone()).collect(),
        prototype_set,
        prototypes,
        attributions,
        aggregate,
        summary,
    })
}
