//! Post-hoc explanations: Shapley attributions, ProtoDash prototypes,
//! aggregated importances and prototype summaries.

mod aggregate;
mod protodash;
mod shapley;
mod set;
mod summary;

pub use aggregate::{aggregate_importance, FeatureImportance, PhiPoint};
pub use protodash::{median_bandwidth, protodash, rbf, KernelKind, KernelSpec, PrototypeSet};
pub use shapley::{
    shapley_exact, shapley_sampled, Attribution, AttributionMethod, ShapleyValues, MIN_SAMPLES,
};
pub use set::{attribute, explain_cohort, select_prototypes, ExplanationSet, Prototype};
pub use summary::{summarize_prototypes, PrototypeSummary, SummaryRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk::ModelError;

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("{n} features exceed the exact-enumeration cap of {cap}; use shapley_sampled")]
    TooManyFeatures { n: usize, cap: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Explain section of the pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Largest feature count for exact enumeration.
    pub exact_cap: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Test patients at or above this risk form the prototype pool.
    pub risk_threshold: f64,
    pub k: usize,
    pub top_n: usize,
    /// Percentage at or above which a summary row is flagged.
    pub prevalence_cutoff: f64,
    /// RBF bandwidth; the median pairwise distance when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            exact_cap: 20,
            n_samples: 1000,
            seed: 11,
            risk_threshold: 0.5,
            k: 20,
            top_n: 20,
            prevalence_cutoff: 50.0,
            bandwidth: None,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<(), ExplainError> {
        if self.n_samples < MIN_SAMPLES {
            return Err(ExplainError::Config(format!("n_samples must be at least {MIN_SAMPLES}")));
        }
        if self.k == 0 || self.top_n == 0 {
            return Err(ExplainError::Config("k and top_n must be positive".into()));
        }
        if !(0.0..=100.0).contains(&self.prevalence_cutoff) {
            return Err(ExplainError::Config("prevalence_cutoff is a percentage".into()));
        }
        if self.bandwidth.is_some_and(|b| !(b > 0.0 && b.is_finite())) {
            return Err(ExplainError::Config("bandwidth must be positive".into()));
        }
        Ok(())
    }
}
