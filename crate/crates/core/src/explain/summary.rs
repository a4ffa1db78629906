use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::cohort::{CcsMap, FeatureMatrix, AGE_GROUP_FEATURES, SEX_FEMALE};

/// Display label of the sex row.
const SEX_ROW: &str = "SEX - FEMALE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRow {
    pub label: String,
    pub count: usize,
    pub flagged: bool,
}

/// Counts over a prototype set. Percentages are derived from the integer
/// counts on demand, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeSummary {
    pub n: usize,
    pub cutoff_pct: f64,
    pub rows: Vec<SummaryRow>,
}

impl PrototypeSummary {
    /// `100·count/n` to one decimal, half-up, as tenths of a percent.
    pub fn tenths(&self, count: usize) -> usize {
        if self.n == 0 {
            return 0;
        }
        (2000 * count + self.n) / (2 * self.n)
    }

    /// `count (pct)`, e.g. `15 (75.0)`.
    pub fn cell(&self, count: usize) -> String {
        let t = self.tenths(count);
        format!("{count} ({}.{})", t / 10, t % 10)
    }

    pub fn row(&self, label: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Plain-text table in a `Feature / Count (%)` layout; flagged rows end
    /// with `*`.
    pub fn render_text(&self) -> String {
        let mut lines: Vec<(String, String)> = vec![("n".into(), self.n.to_string())];
        for r in &self.rows {
            let mut cell = self.cell(r.count);
            if r.flagged {
                cell.push_str(" *");
            }
            lines.push((r.label.clone(), cell));
        }
        let w0 = lines.iter().map(|l| l.0.chars().count()).max().unwrap_or(0).max("Feature".len());
        let w1 = lines.iter().map(|l| l.1.len()).max().unwrap_or(0).max("Count (%)".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<w0$}  {:>w1$}", "Feature", "Count (%)");
        let _ = writeln!(out, "{}  {}", "-".repeat(w0), "-".repeat(w1));
        for (a, b) in &lines {
            let _ = writeln!(out, "{a:<w0$}  {b:>w1$}");
        }
        let _ = writeln!(out, "* prevalence >= {}%", self.cutoff_pct);
        out
    }
}

/// Summarises prototype rows: age groups and sex reported as-is, then CCS
/// indicator columns rolled up to Level-1 groups (a patient counts once
/// per group). Groups are listed alphabetically; every group with at least
/// one column in the matrix appears, including empty ones.
pub fn summarize_prototypes(
    rows: &[&[f64]],
    meta: &FeatureMatrix,
    ccs_map: &CcsMap,
    cutoff_pct: f64,
) -> Result<PrototypeSummary, ExplainError> {
    if rows.is_empty() {
        return Err(ExplainError::Input("no prototype rows to summarise".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != meta.width()) {
        return Err(ExplainError::Input(format!(
            "row width {} does not match {} features",
            r.len(),
            meta.width()
        )));
    }
    let n = rows.len();
    let present = |r: &[f64], col: usize| r[col] != 0.0;
    let flag = |count: usize| count as f64 * 100.0 >= cutoff_pct * n as f64;

    let mut out = Vec::new();
    let mut demo = AGE_GROUP_FEATURES.to_vec();
    demo.sort_unstable();
    demo.push(SEX_FEMALE);
    for name in demo {
        let Some(col) = meta.column(name) else { continue };
        let count = rows.iter().filter(|r| present(r, col)).count();
        let label = if name == SEX_FEMALE { SEX_ROW.to_string() } else { name.to_string() };
        out.push(SummaryRow { label, count, flagged: flag(count) });
    }

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (col, ccs) in meta.feature_ccs.iter().enumerate() {
        if let Some(ccs) = ccs {
            let group = ccs_map
                .level1_of(*ccs)
                .ok_or_else(|| ExplainError::Input(format!("CCS {ccs} missing from the crosswalk")))?;
            groups.entry(group).or_default().push(col);
        }
    }
    for (group, cols) in groups {
        let count = rows.iter().filter(|r| cols.iter().any(|&c| present(r, c))).count();
        out.push(SummaryRow { label: group.to_string(), count, flagged: flag(count) });
    }
    Ok(PrototypeSummary { n, cutoff_pct, rows: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(n: usize) -> PrototypeSummary {
        PrototypeSummary { n, cutoff_pct: 50.0, rows: vec![] }
    }

    #[test]
    fn cells_match_table_format() {
        let s = summary(20);
        assert_eq!(s.cell(15), "15 (75.0)");
        assert_eq!(s.cell(20), "20 (100.0)");
        assert_eq!(s.cell(1), "1 (5.0)");
        assert_eq!(s.cell(0), "0 (0.0)");
        assert_eq!(summary(3).cell(1), "1 (33.3)");
        assert_eq!(summary(3).cell(2), "2 (66.7)");
        assert_eq!(summary(8).cell(1), "1 (12.5)");
    }

    #[test]
    fn rolls_up_to_level1_groups() {
        let map = CcsMap::fixture();
        let circ = map.ccs_codes().find(|&c| map.level1_of(c) == Some("Diseases of the circulatory system")).unwrap();
        let circ2 = map
            .ccs_codes()
            .filter(|&c| map.level1_of(c) == Some("Diseases of the circulatory system"))
            .nth(1)
            .unwrap();
        let meta = FeatureMatrix {
            feature_names: vec![
                format!("CCS_{circ}"),
                format!("CCS_{circ2}"),
                "AGE_GRP_Y".into(),
                "AGE_GRP_M".into(),
                "AGE_GRP_O".into(),
                "SEX_FEMALE".into(),
            ],
            feature_ccs: vec![Some(circ), Some(circ2), None, None, None, None],
            patient_ids: vec![],
            index_dates: vec![],
            rows: vec![],
            labels: vec![],
        };
        let rows = [
            vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0],
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        ];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = summarize_prototypes(&refs, &meta, &map, 50.0).unwrap();
        let labels: Vec<&str> = s.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            ["AGE_GRP_M", "AGE_GRP_O", "AGE_GRP_Y", "SEX - FEMALE", "Diseases of the circulatory system"]
        );
        let circ_row = s.row("Diseases of the circulatory system").unwrap();
        assert_eq!(circ_row.count, 2);
        assert!(circ_row.flagged);
        assert!(!s.row("AGE_GRP_Y").unwrap().flagged);
        let text = s.render_text();
        assert!(text.contains("2 (50.0) *"));
        assert!(text.lines().nth(2).unwrap().starts_with("n "));
    }
}
