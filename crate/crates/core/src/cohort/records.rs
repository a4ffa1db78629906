use std::io::{BufRead, Write};

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::codes::is_valid_code;
use super::CohortError;

/// Day 0 of the dataset is 1 January of this year.
pub const DATASET_EPOCH_YEAR: i32 = 2013;

/// Calendar year of a day index.
pub fn year_of_day(day: u32) -> i32 {
    let epoch = NaiveDate::from_ymd_opt(DATASET_EPOCH_YEAR, 1, 1).unwrap();
    epoch
        .checked_add_days(Days::new(day.into()))
        .map(|d| d.year())
        .unwrap_or(i32::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Visit {
    pub date: u32,
    pub codes: Vec<String>,
}

impl Visit {
    pub fn new(date: u32, codes: &[&str]) -> Self {
        Self {
            date,
            codes: codes.iter().map(|c| c.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub patient_id: String,
    pub birth_year: i32,
    pub sex: Sex,
    pub enrollment_start: u32,
    pub enrollment_end: u32,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<(), CohortError> {
        let fail = |reason: String| CohortError::InvalidRecord {
            patient_id: self.patient_id.clone(),
            reason,
        };
        if self.enrollment_start > self.enrollment_end {
            return Err(fail("enrollment_start after enrollment_end".into()));
        }
        let mut prev = None;
        for v in &self.visits {
            if prev.is_some_and(|p| v.date < p) {
                return Err(fail(format!("visits out of order at day {}", v.date)));
            }
            prev = Some(v.date);
            if v.date < self.enrollment_start || v.date > self.enrollment_end {
                return Err(fail(format!("visit day {} outside enrollment", v.date)));
            }
            if v.codes.is_empty() {
                return Err(fail(format!("visit day {} has no codes", v.date)));
            }
            if let Some(bad) = v.codes.iter().find(|c| !is_valid_code(c)) {
                return Err(fail(format!("malformed diagnosis code `{bad}`")));
            }
        }
        Ok(())
    }
}

/// Reads newline-delimited JSON claims, one validated record per line.
/// Blank lines are ignored.
pub fn read_ndjson(reader: impl BufRead) -> Result<Vec<PatientRecord>, CohortError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PatientRecord =
            serde_json::from_str(&line).map_err(|source| CohortError::Parse { line: i + 1, source })?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_ndjson(mut w: impl Write, records: &[PatientRecord]) -> Result<(), CohortError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CohortError::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
