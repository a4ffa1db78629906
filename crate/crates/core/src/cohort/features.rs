use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ccs::CcsMap;
use super::select::{age_at, label_outcome, Cohort};
use super::{CohortConfig, CohortError};

pub const AGE_GROUP_FEATURES: [&str; 3] = ["AGE_GRP_Y", "AGE_GRP_M", "AGE_GRP_O"];
pub const SEX_FEMALE: &str = "SEX_FEMALE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Presence/absence of each CCS code before the index date.
    #[default]
    Binary,
    /// Number of visits carrying each CCS code before the index date.
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgeGroup {
    Young,
    Middle,
    Old,
}

/// Y = up to 44, M = 45–54, O = 55 and over.
pub fn age_group(age: i32) -> AgeGroup {
    match age {
        ..=44 => AgeGroup::Young,
        45..=54 => AgeGroup::Middle,
        _ => AgeGroup::Old,
    }
}

impl AgeGroup {
    fn offset(self) -> usize {
        match self {
            AgeGroup::Young => 0,
            AgeGroup::Middle => 1,
            AgeGroup::Old => 2,
        }
    }
}

/// One row per cohort patient. Column order is the sorted CCS indicators,
/// then the three age-group one-hots, then `SEX_FEMALE`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    /// CCS code behind each column; `None` for demographic columns.
    pub feature_ccs: Vec<Option<u32>>,
    pub patient_ids: Vec<String>,
    pub index_dates: Vec<u32>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn row_of(&self, patient_id: &str) -> Option<usize> {
        self.patient_ids.iter().position(|p| p == patient_id)
    }

    pub fn select_rows(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<u8>) {
        (
            idx.iter().map(|&i| self.rows[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Column means over the given rows.
    pub fn column_means(&self, idx: &[usize]) -> Vec<f64> {
        let mut m = vec![0.0; self.width()];
        for &i in idx {
            for (acc, v) in m.iter_mut().zip(&self.rows[i]) {
                *acc += v;
            }
        }
        let n = idx.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Display label of a column: the CCS description when the crosswalk
    /// has one, else the column name.
    pub fn display_name<'a>(&'a self, col: usize, ccs_map: &'a CcsMap) -> &'a str {
        self.feature_ccs[col]
            .and_then(|c| ccs_map.label_of(c))
            .unwrap_or(&self.feature_names[col])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBuild {
    pub matrix: FeatureMatrix,
    /// CCS columns removed by the prevalence threshold.
    pub dropped: Vec<String>,
}

fn ccs_feature_name(ccs: u32) -> String {
    format!("CCS_{ccs}")
}

pub fn build_features(
    cohort: &Cohort,
    ccs_map: &CcsMap,
    cfg: &CohortConfig,
) -> Result<FeatureBuild, CohortError> {
    let fc = &cfg.features;
    let mut per_patient: Vec<BTreeMap<u32, u32>> = Vec::with_capacity(cohort.members.len());
    for m in &cohort.members {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for v in m.record.visits.iter().take_while(|v| v.date <= m.index_date) {
            let mut seen = Vec::new();
            for code in &v.codes {
                if fc.ignore_codes.contains(code) {
                    continue;
                }
                let entry = ccs_map.lookup(code).ok_or_else(|| CohortError::UnmappedCode {
                    code: code.clone(),
                    patient_id: m.record.patient_id.clone(),
                })?;
                if !seen.contains(&entry.ccs) {
                    seen.push(entry.ccs);
                    *counts.entry(entry.ccs).or_default() += 1;
                }
            }
        }
        per_patient.push(counts);
    }

    let n = per_patient.len();
    let mut prevalence: BTreeMap<u32, usize> = BTreeMap::new();
    for counts in &per_patient {
        for &ccs in counts.keys() {
            *prevalence.entry(ccs).or_default() += 1;
        }
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (&ccs, &k) in &prevalence {
        if n > 0 && (k as f64) / (n as f64) < fc.min_prevalence {
            dropped.push(ccs_feature_name(ccs));
        } else {
            kept.push(ccs);
        }
    }
    if !dropped.is_empty() {
        log::info!("dropped {} sparse CCS features: {}", dropped.len(), dropped.join(", "));
    }

    let mut feature_names: Vec<String> = kept.iter().map(|&c| ccs_feature_name(c)).collect();
    let mut feature_ccs: Vec<Option<u32>> = kept.iter().map(|&c| Some(c)).collect();
    for name in AGE_GROUP_FEATURES.iter().chain([&SEX_FEMALE]) {
        feature_names.push(name.to_string());
        feature_ccs.push(None);
    }
    let n_ccs = kept.len();

    let mut matrix = FeatureMatrix {
        feature_names,
        feature_ccs,
        patient_ids: Vec::with_capacity(n),
        index_dates: Vec::with_capacity(n),
        rows: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
    };
    for (m, counts) in cohort.members.iter().zip(&per_patient) {
        let mut row = vec![0.0; n_ccs + 4];
        for (j, ccs) in kept.iter().enumerate() {
            if let Some(&c) = counts.get(ccs) {
                row[j] = match fc.mode {
                    FeatureMode::Binary => 1.0,
                    FeatureMode::Count => f64::from(c),
                };
            }
        }
        row[n_ccs + age_group(age_at(&m.record, m.index_date)).offset()] = 1.0;
        if m.record.sex == super::Sex::F {
            row[n_ccs + 3] = 1.0;
        }
        matrix.patient_ids.push(m.record.patient_id.clone());
        matrix.index_dates.push(m.index_date);
        matrix.rows.push(row);
        matrix.labels.push(label_outcome(&m.record, m.index_date, cfg));
    }
    Ok(FeatureBuild { matrix, dropped })
}
