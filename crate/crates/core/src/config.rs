//! Pipeline configuration file: one JSON object with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortConfig, SynthConfig};
use crate::context::ContextConfig;
use crate::error::PipelineError;
use crate::explain::ExplainConfig;
use crate::qa::QaConfig;
use crate::risk::{ModelConfig, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    /// Job executor threads; 1 keeps artifacts deterministic.
    pub workers: usize,
    /// When set, every /v1 request must carry `Authorization: Bearer <token>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
    /// Directory served under /ui.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { port: 8080, data_dir: PathBuf::from("data"), workers: 1, bearer_token: None, ui_dir: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidelineConfig {
    /// Guideline HTML; the bundled fixture when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub html: Option<PathBuf>,
    /// Parse config JSON; the bundled one when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// ICD-to-CCS crosswalk JSON; the bundled fixture when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ccs_map: Option<PathBuf>,
    pub synth: SynthConfig,
    pub cohort: CohortConfig,
    pub model: ModelConfig,
    /// Model the explain stage and the question flow use.
    pub active_model: ModelKind,
    pub explain: ExplainConfig,
    pub guidelines: GuidelineConfig,
    pub qa: QaConfig,
    pub context: ContextConfig,
    pub service: ServiceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ccs_map: None,
            synth: SynthConfig::default(),
            cohort: CohortConfig::default(),
            model: ModelConfig::default(),
            active_model: ModelKind::MLP,
            explain: ExplainConfig::default(),
            guidelines: GuidelineConfig::default(),
            qa: QaConfig::default(),
            context: ContextConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, PipelineError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| PipelineError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("config serialises");
        v.push(b'\n');
        v
    }

    /// Checks every section.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg_err = |path: &str, e: &dyn std::fmt::Display| PipelineError::Config {
            path: path.into(),
            message: e.to_string(),
        };
        self.synth.validate().map_err(|e| cfg_err("synth", &e))?;
        self.cohort.validate().map_err(|e| cfg_err("cohort", &e))?;
        self.model.validate().map_err(|e| cfg_err("model", &e))?;
        self.explain.validate().map_err(|e| cfg_err("explain", &e))?;
        self.qa.validate().map_err(|e| cfg_err("qa", &e))?;
        if self.service.workers == 0 {
            return Err(cfg_err("service.workers", &"must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(PipelineConfig::from_json(b"{}").unwrap(), c);
    }

    #[test]
    fn errors_name_the_path() {
        let err = PipelineConfig::from_json(br#"{"model": {"epochs": "many"}}"#).unwrap_err();
        match err {
            PipelineError::Config { path, .. } => assert_eq!(path, "model.epochs"),
            other => panic!("{other:?}"),
        }
        let err = PipelineConfig::from_json(br#"{"explain": {"n_samples": 5}}"#).unwrap_err();
        assert!(matches!(err, PipelineError::Config { path, .. } if path == "explain"));
    }
}
