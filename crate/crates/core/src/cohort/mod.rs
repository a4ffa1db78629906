//! Claims records, T2DM cohort selection, CKD outcome labels and the
//! CCS feature matrix.

mod ccs;
mod codes;
mod features;
mod records;
mod select;
mod synth;

pub use ccs::{CcsEntry, CcsMap};
pub use codes::{code_system, is_valid_code, CodePattern, CodeSet, CodeSystem};
pub use features::{
    age_group, build_features, AgeGroup, FeatureBuild, FeatureMatrix, FeatureMode,
    AGE_GROUP_FEATURES, SEX_FEMALE,
};
pub use records::{read_ndjson, write_ndjson, year_of_day, PatientRecord, Sex, Visit, DATASET_EPOCH_YEAR};
pub use select::{
    age_at, check_patient, label_outcome, select_cohort, Cohort, CohortMember, ExclusionReason,
};
pub use synth::{default_weights, exposure_codes, generate_claims, SynthConfig, XorTerm};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid code pattern `{0}`")]
    InvalidPattern(String),
    #[error("invalid record {patient_id}: {reason}")]
    InvalidRecord { patient_id: String, reason: String },
    #[error("ccs map: {0}")]
    CcsMap(String),
    #[error("unmapped diagnosis code `{code}` (patient {patient_id})")]
    UnmappedCode { code: String, patient_id: String },
    #[error("claims line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Inclusion criteria, outcome definition and feature settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub t2dm_codes: CodeSet,
    pub t1d_codes: CodeSet,
    pub ckd_codes: CodeSet,
    pub min_t2dm_visits: usize,
    pub pre_enrollment_days: u32,
    pub age_min: i32,
    pub age_max: i32,
    pub horizon_days: u32,
    pub features: FeatureConfig,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            t2dm_codes: CodeSet::from_patterns(&["250.*0", "250.*2", "362.0", "E11.*"]),
            t1d_codes: CodeSet::from_patterns(&["250.*1", "250.*3", "E10.*"]),
            ckd_codes: CodeSet::from_patterns(&["N18.*", "585.*", "403.*"]),
            min_t2dm_visits: 2,
            pre_enrollment_days: 365,
            age_min: 19,
            age_max: 64,
            horizon_days: 360,
            features: FeatureConfig::default(),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<(), CohortError> {
        if self.horizon_days == 0 {
            return Err(CohortError::Config("horizon_days must be positive".into()));
        }
        if self.age_min >= self.age_max {
            return Err(CohortError::Config("age_min must be below age_max".into()));
        }
        if self.min_t2dm_visits == 0 {
            return Err(CohortError::Config("min_t2dm_visits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub mode: FeatureMode,
    /// CCS indicators present in fewer than this fraction of rows are dropped.
    pub min_prevalence: f64,
    /// Codes skipped during CCS lookup instead of raising a mapping error.
    pub ignore_codes: CodeSet,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            mode: FeatureMode::Binary,
            min_prevalence: 0.005,
            ignore_codes: CodeSet(Vec::new()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_inclusion_constants() {
        let c = CohortConfig::default();
        assert!(c.t2dm_codes.contains("250.40"));
        assert!(c.t2dm_codes.contains("250.02"));
        assert!(c.t2dm_codes.contains("362.0"));
        assert!(c.t2dm_codes.contains("E11.9"));
        assert!(!c.t2dm_codes.contains("250.01"));
        assert!(c.t1d_codes.contains("250.01"));
        assert!(c.t1d_codes.contains("E10.65"));
        assert!(c.ckd_codes.contains("N18.3"));
        assert!(c.ckd_codes.contains("585.6"));
        assert!(c.ckd_codes.contains("403.91"));
        assert_eq!(
            (c.min_t2dm_visits, c.pre_enrollment_days, c.age_min, c.age_max, c.horizon_days),
            (2, 365, 19, 64, 360)
        );
        c.validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_bounds() {
        let c = CohortConfig { horizon_days: 0, ..CohortConfig::default() };
        assert!(c.validate().is_err());
        let c = CohortConfig { age_min: 64, ..CohortConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_partial_section() {
        let c: CohortConfig = serde_json::from_str(r#"{"horizon_days": 180}"#).unwrap();
        assert_eq!(c.horizon_days, 180);
        assert_eq!(c.age_max, 64);
        assert!(serde_json::from_str::<CohortConfig>(r#"{"horizon": 1}"#).is_err());
    }
}
