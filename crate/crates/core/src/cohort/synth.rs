//! Synthetic claims with a planted logistic CKD risk.
//!
//! Exposure features come from the crosswalk: one representative ICD
//! code per CCS category, skipping categories reachable by the T2DM, T1D
//! or CKD code sets. A fraction of patients is made to fail exactly one
//! inclusion criterion.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ccs::CcsMap;
use super::records::{year_of_day, PatientRecord, Sex, Visit};
use super::select::ExclusionReason;
use super::{CohortConfig, CohortError};

/// Last day of the simulated dataset (five calendar years from day 0).
const LAST_DAY: u32 = 1825;

const T2DM_CODES: [&str; 3] = ["E11.9", "250.00", "E11.65"];
const T1D_CODES: [&str; 2] = ["E10.9", "250.01"];
const CKD_CODES: [&str; 3] = ["N18.3", "585.3", "N18.9"];

/// Adds `weight` to the logit when exactly one of features `a`, `b` is present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XorTerm {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub n_ccs_features: usize,
    pub seed: u64,
    pub planted_weights: Vec<f64>,
    /// Outcome probability at the average exposure profile; exactly the
    /// positive rate when every planted weight is zero.
    pub base_rate: f64,
    pub exposure_prob: f64,
    pub xor_terms: Vec<XorTerm>,
    /// Fraction of patients made to fail one inclusion criterion.
    pub violation_rate: f64,
    /// Fraction of negatives given a CKD code after the horizon.
    pub late_ckd_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let n = 30;
        Self {
            n_patients: 5000,
            n_ccs_features: n,
            seed: 7,
            planted_weights: default_weights(n),
            base_rate: 0.12,
            exposure_prob: 0.25,
            xor_terms: Vec::new(),
            violation_rate: 0.1,
            late_ckd_rate: 0.2,
        }
    }
}

/// A fixed, sparse weight profile: a handful of strong risk factors, a few
/// protective ones, the rest null.
pub fn default_weights(n: usize) -> Vec<f64> {
    const PROFILE: [f64; 10] = [2.0, 1.6, 1.2, -1.2, 1.0, 0.0, 0.8, -0.8, 0.0, 0.6];
    (0..n).map(|i| if i < 20 { PROFILE[i % 10] } else { 0.0 }).collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CohortError> {
        let bad = |m: String| Err(CohortError::Config(m));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if self.planted_weights.len() != self.n_ccs_features {
            return bad(format!(
                "planted_weights has {} entries, expected n_ccs_features = {}",
                self.planted_weights.len(),
                self.n_ccs_features
            ));
        }
        for (name, p) in [
            ("base_rate", self.base_rate),
            ("exposure_prob", self.exposure_prob),
            ("violation_rate", self.violation_rate),
            ("late_ckd_rate", self.late_ckd_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return bad("base_rate must lie strictly inside (0, 1)".into());
        }
        for t in &self.xor_terms {
            if t.a >= self.n_ccs_features || t.b >= self.n_ccs_features || t.a == t.b {
                return bad(format!("xor term ({}, {}) out of range", t.a, t.b));
            }
        }
        Ok(())
    }
}

/// Representative code for each usable CCS exposure, in CCS order.
pub fn exposure_codes(ccs_map: &CcsMap, cohort: &CohortConfig) -> Vec<(u32, String)> {
    let special = |code: &str| {
        cohort.t2dm_codes.contains(code)
            || cohort.t1d_codes.contains(code)
            || cohort.ckd_codes.contains(code)
    };
    ccs_map
        .ccs_codes()
        .filter(|&ccs| !ccs_map.patterns_for(ccs).any(|p| special(&p.instantiate())))
        .filter_map(|ccs| {
            let mut pats: Vec<_> = ccs_map.patterns_for(ccs).collect();
            pats.sort_by_key(|p| !p.is_exact());
            pats.first().map(|p| (ccs, p.instantiate()))
        })
        .collect()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn generate_claims(
    cfg: &SynthConfig,
    ccs_map: &CcsMap,
) -> Result<Vec<PatientRecord>, CohortError> {
    cfg.validate()?;
    let cohort_cfg = CohortConfig::default();
    let exposures = exposure_codes(ccs_map, &cohort_cfg);
    if exposures.len() < cfg.n_ccs_features {
        return Err(CohortError::Config(format!(
            "crosswalk offers {} exposure categories, {} requested",
            exposures.len(),
            cfg.n_ccs_features
        )));
    }
    let exposures = &exposures[..cfg.n_ccs_features];
    let xor_features: BTreeSet<usize> =
        cfg.xor_terms.iter().flat_map(|t| [t.a, t.b]).collect();

    // Centre the planted terms so base_rate sets the typical risk.
    let mut intercept = logit(cfg.base_rate);
    for (j, w) in cfg.planted_weights.iter().enumerate() {
        let p = if xor_features.contains(&j) { 0.5 } else { cfg.exposure_prob };
        intercept -= w * p;
    }
    intercept -= cfg.xor_terms.iter().map(|t| 0.5 * t.weight).sum::<f64>();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_patients);
    for i in 0..cfg.n_patients {
        let violation = if rng.gen_bool(cfg.violation_rate) {
            Some(*ExclusionReason::ALL.choose(&mut rng).unwrap())
        } else {
            None
        };
        let sex = if rng.gen_bool(0.5) { Sex::F } else { Sex::M };
        let index = rng.gen_range(365..=LAST_DAY - 366);
        let age = match violation {
            Some(ExclusionReason::AgeOutOfRange) => {
                if rng.gen_bool(0.5) {
                    rng.gen_range(65..=80)
                } else {
                    rng.gen_range(10..=18)
                }
            }
            _ => rng.gen_range(19..=64),
        };
        let birth_year = year_of_day(index) - age;
        let enrollment_start = match violation {
            Some(ExclusionReason::InsufficientEnrollment) => rng.gen_range(index - 300..=index),
            _ => rng.gen_range(0..=index - 365),
        };
        let enrollment_end = LAST_DAY;

        let mut days: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
        let add = |d: &mut BTreeMap<u32, BTreeSet<String>>, day: u32, code: &str| {
            d.entry(day).or_default().insert(code.to_string());
        };

        let x: Vec<bool> = (0..exposures.len())
            .map(|j| {
                let p = if xor_features.contains(&j) { 0.5 } else { cfg.exposure_prob };
                rng.gen_bool(p)
            })
            .collect();
        for (j, present) in x.iter().enumerate() {
            if *present {
                let day = rng.gen_range(enrollment_start..=index);
                add(&mut days, day, &exposures[j].1);
            }
        }

        add(&mut days, index, T2DM_CODES.choose(&mut rng).unwrap());
        let n_t2dm = match violation {
            Some(ExclusionReason::InsufficientVisits) => 1,
            _ => rng.gen_range(2..=4),
        };
        for _ in 1..n_t2dm {
            let day = rng.gen_range(index + 1..=index + 365);
            add(&mut days, day, T2DM_CODES.choose(&mut rng).unwrap());
        }
        if violation == Some(ExclusionReason::T1dDominant) {
            for _ in 0..n_t2dm + 1 {
                let day = rng.gen_range(index + 1..=enrollment_end);
                add(&mut days, day, T1D_CODES.choose(&mut rng).unwrap());
            }
        }
        if violation == Some(ExclusionReason::PrevalentCkd) {
            let day = rng.gen_range(enrollment_start..=index);
            add(&mut days, day, CKD_CODES.choose(&mut rng).unwrap());
        }

        let mut z = intercept;
        for (w, present) in cfg.planted_weights.iter().zip(&x) {
            if *present {
                z += w;
            }
        }
        for t in &cfg.xor_terms {
            if x[t.a] != x[t.b] {
                z += t.weight;
            }
        }
        let positive = rng.gen_bool(sigmoid(z));
        if positive {
            let day = rng.gen_range(index + 1..=index + cohort_cfg.horizon_days);
            add(&mut days, day, CKD_CODES.choose(&mut rng).unwrap());
        } else if rng.gen_bool(cfg.late_ckd_rate) {
            let lo = index + cohort_cfg.horizon_days + 1;
            if lo <= enrollment_end {
                let day = rng.gen_range(lo..=enrollment_end);
                add(&mut days, day, CKD_CODES.choose(&mut rng).unwrap());
            }
        }

        // Post-index noise never reaches the feature window.
        for _ in 0..rng.gen_range(0..=2) {
            let day = rng.gen_range(index + 1..=enrollment_end);
            let code = &exposures.choose(&mut rng).unwrap().1;
            add(&mut days, day, code);
        }

        let visits = days
            .into_iter()
            .map(|(date, codes)| Visit { date, codes: codes.into_iter().collect() })
            .collect();
        out.push(PatientRecord {
            patient_id: format!("P{i:06}"),
            birth_year,
            sex,
            enrollment_start,
            enrollment_end,
            visits,
        });
    }
    Ok(out)
}
