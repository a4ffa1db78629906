use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::codes::CodePattern;
use super::CohortError;

/// Target of one crosswalk pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcsEntry {
    pub ccs: u32,
    pub level1: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// ICD pattern → CCS crosswalk.
///
/// Every CCS code must carry the same Level-1 group (and label) in every
/// entry that targets it; conflicts are rejected when the map is built.
/// Lookup prefers an exact pattern, then the most specific wildcard
/// pattern, ties broken by pattern text.
#[derive(Debug, Clone, PartialEq)]
pub struct CcsMap {
    entries: BTreeMap<CodePattern, CcsEntry>,
    exact: HashMap<String, CodePattern>,
    wildcards: Vec<CodePattern>,
    groups: BTreeMap<u32, (String, Option<String>)>,
}

impl CcsMap {
    pub fn new(entries: BTreeMap<CodePattern, CcsEntry>) -> Result<Self, CohortError> {
        if entries.is_empty() {
            return Err(CohortError::CcsMap("crosswalk is empty".into()));
        }
        let mut groups: BTreeMap<u32, (String, Option<String>)> = BTreeMap::new();
        for (pattern, e) in &entries {
            if e.level1.trim().is_empty() {
                return Err(CohortError::CcsMap(format!("pattern {pattern}: empty level1 label")));
            }
            match groups.get_mut(&e.ccs) {
                None => {
                    groups.insert(e.ccs, (e.level1.clone(), e.label.clone()));
                }
                Some((level1, label)) => {
                    if *level1 != e.level1 {
                        return Err(CohortError::CcsMap(format!(
                            "CCS {} has conflicting level1 groups `{}` and `{}`",
                            e.ccs, level1, e.level1
                        )));
                    }
                    match (&label, &e.label) {
                        (Some(a), Some(b)) if a != b => {
                            return Err(CohortError::CcsMap(format!(
                                "CCS {} has conflicting labels `{a}` and `{b}`",
                                e.ccs
                            )))
                        }
                        (None, Some(b)) => *label = Some(b.clone()),
                        _ => {}
                    }
                }
            }
        }
        let exact = entries
            .keys()
            .filter(|p| p.is_exact())
            .map(|p| (p.as_str().to_string(), p.clone()))
            .collect();
        let mut wildcards: Vec<CodePattern> =
            entries.keys().filter(|p| !p.is_exact()).cloned().collect();
        wildcards.sort_by(|a, b| b.specificity().cmp(&a.specificity()).then(a.cmp(b)));
        Ok(Self { entries, exact, wildcards, groups })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, CohortError> {
        let entries: BTreeMap<CodePattern, CcsEntry> =
            serde_json::from_slice(bytes).map_err(|e| CohortError::CcsMap(e.to_string()))?;
        Self::new(entries)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.entries).expect("ccs map serializes")
    }

    /// The crosswalk fixture shipped with the crate.
    pub fn fixture() -> Self {
        Self::from_json(include_bytes!("../../fixtures/ccs_map.json")).expect("valid fixture")
    }

    pub fn lookup(&self, code: &str) -> Option<&CcsEntry> {
        if let Some(p) = self.exact.get(code) {
            return self.entries.get(p);
        }
        self.wildcards
            .iter()
            .find(|p| p.matches(code))
            .and_then(|p| self.entries.get(p))
    }

    pub fn entries(&self) -> &BTreeMap<CodePattern, CcsEntry> {
        &self.entries
    }

    pub fn ccs_codes(&self) -> impl Iterator<Item = u32> + '_ {
        self.groups.keys().copied()
    }

    pub fn level1_of(&self, ccs: u32) -> Option<&str> {
        self.groups.get(&ccs).map(|(l, _)| l.as_str())
    }

    pub fn label_of(&self, ccs: u32) -> Option<&str> {
        self.groups.get(&ccs).and_then(|(_, l)| l.as_deref())
    }

    pub fn level1_groups(&self) -> BTreeSet<&str> {
        self.groups.values().map(|(l, _)| l.as_str()).collect()
    }

    /// Patterns that target the given CCS code, in pattern order.
    pub fn patterns_for(&self, ccs: u32) -> impl Iterator<Item = &CodePattern> + '_ {
        self.entries
            .iter()
            .filter(move |(_, e)| e.ccs == ccs)
            .map(|(p, _)| p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(ccs: u32, level1: &str) -> CcsEntry {
        CcsEntry { ccs, level1: level1.into(), label: None }
    }

    fn map(items: &[(&str, u32, &str)]) -> Result<CcsMap, CohortError> {
        CcsMap::new(
            items
                .iter()
                .map(|(p, c, l)| (CodePattern::new(p).unwrap(), entry(*c, l)))
                .collect(),
        )
    }

    #[test]
    fn exact_beats_wildcard_and_specific_beats_general() {
        let m = map(&[
            ("E11.*", 50, "Endo"),
            ("E11.9", 49, "Endo"),
            ("E1*", 51, "Endo"),
        ])
        .unwrap();
        assert_eq!(m.lookup("E11.9").unwrap().ccs, 49);
        assert_eq!(m.lookup("E11.65").unwrap().ccs, 50);
        assert_eq!(m.lookup("E13.1").unwrap().ccs, 51);
        assert!(m.lookup("I10").is_none());
    }

    #[test]
    fn conflicting_level1_rejected() {
        let err = map(&[("I10", 98, "Circ"), ("401.9", 98, "Resp")]).unwrap_err();
        assert!(err.to_string().contains("conflicting level1"));
    }

    #[test]
    fn fixture_shape() {
        let m = CcsMap::fixture();
        assert_eq!(m.level1_groups().len(), 18);
        assert!(m.entries().len() >= 40);
        assert_eq!(m.lookup("E11.9").unwrap().ccs, 49);
        assert_eq!(m.lookup("I10").unwrap().ccs, 98);
        assert_eq!(m.lookup("250.40").unwrap().ccs, 50);
        assert_eq!(m.lookup("N18.3").unwrap().ccs, 158);
        for ccs in m.ccs_codes() {
            assert!(m.label_of(ccs).is_some(), "CCS {ccs} lacks a label");
        }
    }

    #[test]
    fn json_round_trip() {
        let m = CcsMap::fixture();
        assert_eq!(CcsMap::from_json(&m.to_json()).unwrap(), m);
    }
}
