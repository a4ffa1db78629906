use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::records::{year_of_day, PatientRecord};
use super::CohortConfig;

/// First failing inclusion criterion, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    InsufficientVisits,
    InsufficientEnrollment,
    T1dDominant,
    AgeOutOfRange,
    PrevalentCkd,
}

impl ExclusionReason {
    pub const ALL: [ExclusionReason; 5] = [
        Self::InsufficientVisits,
        Self::InsufficientEnrollment,
        Self::T1dDominant,
        Self::AgeOutOfRange,
        Self::PrevalentCkd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::InsufficientVisits => "insufficient-visits",
            Self::InsufficientEnrollment => "insufficient-enrollment",
            Self::T1dDominant => "t1d-dominant",
            Self::AgeOutOfRange => "age-out-of-range",
            Self::PrevalentCkd => "prevalent-ckd",
        }
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortMember {
    pub record: PatientRecord,
    /// Day of the first T2DM-coded visit.
    pub index_date: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Cohort {
    pub members: Vec<CohortMember>,
    /// Each excluded patient counted once, under its first failing criterion.
    pub exclusions: BTreeMap<ExclusionReason, usize>,
    pub n_input: usize,
}

impl Cohort {
    pub fn records(&self) -> impl Iterator<Item = &PatientRecord> {
        self.members.iter().map(|m| &m.record)
    }

    pub fn excluded(&self) -> usize {
        self.exclusions.values().sum()
    }
}

/// Age in whole years at a day index, from the birth year only.
pub fn age_at(record: &PatientRecord, day: u32) -> i32 {
    year_of_day(day) - record.birth_year
}

/// Applies the inclusion criteria to one patient, returning its index date
/// or the first criterion it fails.
pub fn check_patient(p: &PatientRecord, cfg: &CohortConfig) -> Result<u32, ExclusionReason> {
    let t2dm_dates: Vec<u32> = p
        .visits
        .iter()
        .filter(|v| cfg.t2dm_codes.any_in(&v.codes))
        .map(|v| v.date)
        .collect();
    if t2dm_dates.len() < cfg.min_t2dm_visits {
        return Err(ExclusionReason::InsufficientVisits);
    }
    let index = t2dm_dates[0];
    if u64::from(p.enrollment_start) + u64::from(cfg.pre_enrollment_days) > u64::from(index) {
        return Err(ExclusionReason::InsufficientEnrollment);
    }
    let t1d = p.visits.iter().filter(|v| cfg.t1d_codes.any_in(&v.codes)).count();
    if t2dm_dates.len() <= t1d {
        return Err(ExclusionReason::T1dDominant);
    }
    let age = age_at(p, index);
    if age < cfg.age_min || age > cfg.age_max {
        return Err(ExclusionReason::AgeOutOfRange);
    }
    let prevalent = p
        .visits
        .iter()
        .take_while(|v| v.date <= index)
        .any(|v| cfg.ckd_codes.any_in(&v.codes));
    if prevalent {
        return Err(ExclusionReason::PrevalentCkd);
    }
    Ok(index)
}

pub fn select_cohort(patients: &[PatientRecord], cfg: &CohortConfig) -> Cohort {
    let mut cohort = Cohort { n_input: patients.len(), ..Cohort::default() };
    for p in patients {
        match check_patient(p, cfg) {
            Ok(index_date) => cohort.members.push(CohortMember { record: p.clone(), index_date }),
            Err(reason) => *cohort.exclusions.entry(reason).or_default() += 1,
        }
    }
    log::debug!(
        "cohort: {} of {} retained, exclusions {:?}",
        cohort.members.len(),
        patients.len(),
        cohort.exclusions
    );
    cohort
}

/// 1 iff a CKD-coded visit falls in `(index_date, index_date + horizon]`.
pub fn label_outcome(p: &PatientRecord, index_date: u32, cfg: &CohortConfig) -> u8 {
    let end = u64::from(index_date) + u64::from(cfg.horizon_days);
    let hit = p.visits.iter().any(|v| {
        v.date > index_date && u64::from(v.date) <= end && cfg.ckd_codes.any_in(&v.codes)
    });
    u8::from(hit)
}
