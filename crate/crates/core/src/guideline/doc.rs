use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::GuidelineError;
use crate::qa::{parse_numeric_phrases, NumericConstraint};

pub const SCHEMA_VERSION: u32 = 1;

static REC_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z0-9]+\.\d+\.\d+$").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    A,
    B,
    C,
    E,
    Ungraded,
}

impl Grade {
    pub fn from_letter(s: &str) -> Option<Self> {
        match s.trim() {
            "A" => Some(Grade::A),
            "B" => Some(Grade::B),
            "C" => Some(Grade::C),
            "E" => Some(Grade::E),
            _ => None,
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::A => "A",
            Grade::B => "B",
            Grade::C => "C",
            Grade::E => "E",
            Grade::Ungraded => "Ungraded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub rec_id: String,
    pub text: String,
    pub grade: Grade,
    /// Cached `parse_numeric_phrases(text)`.
    pub numeric_constraints: Vec<NumericConstraint>,
}

impl Recommendation {
    pub fn new(rec_id: String, text: String, grade: Grade) -> Self {
        let numeric_constraints = parse_numeric_phrases(&text);
        Self { rec_id, text, grade, numeric_constraints }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationGroup {
    pub group_id: String,
    pub topic: String,
    pub recommendations: Vec<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chapter {
    pub chapter_id: String,
    pub title: String,
    pub groups: Vec<RecommendationGroup>,
    /// Tables and other unstructured content, whitespace-normalised.
    pub free_text_sections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineDoc {
    pub schema_version: u32,
    pub doc_id: String,
    pub title: String,
    pub year: Option<i32>,
    pub chapters: Vec<Chapter>,
}

/// One invariant violation, located by a JSON-style path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: String, message: impl Into<String>) {
        self.violations.push(Violation { path, message: message.into() });
    }
}

impl GuidelineDoc {
    pub fn recommendations(&self) -> impl Iterator<Item = &Recommendation> {
        self.chapters.iter().flat_map(|c| c.groups.iter().flat_map(|g| g.recommendations.iter()))
    }

    pub fn recommendation_count(&self) -> usize {
        self.recommendations().count()
    }

    pub fn find(&self, rec_id: &str) -> Option<&Recommendation> {
        self.recommendations().find(|r| r.rec_id == rec_id)
    }

    /// Pretty JSON with struct-declared key order.
    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("guideline doc serialises");
        v.push(b'\n');
        v
    }

    /// Reads a document. In strict mode any field the schema does not
    /// define is an error naming its path.
    pub fn from_json(bytes: &[u8], strict: bool) -> Result<Self, GuidelineError> {
        let value: Value = serde_json::from_slice(bytes)
            .map_err(|e| GuidelineError::Validation { path: "$".into(), message: e.to_string() })?;
        let version = value.get("schema_version").ok_or_else(|| GuidelineError::Validation {
            path: "$.schema_version".into(),
            message: "missing field".into(),
        })?;
        let as_num = version.as_u64().or_else(|| version.as_str().and_then(|s| s.parse().ok()));
        if as_num != Some(u64::from(SCHEMA_VERSION)) {
            return Err(GuidelineError::UnsupportedVersion(version.to_string()));
        }
        let doc: GuidelineDoc = serde_path_to_error::deserialize(&value).map_err(|e| {
            GuidelineError::Validation { path: json_path(&e.path().to_string()), message: e.inner().to_string() }
        })?;
        if strict {
            let known = serde_json::to_value(&doc).expect("guideline doc serialises");
            if let Some(path) = first_unknown(&value, &known, "$") {
                return Err(GuidelineError::Validation { path, message: "unknown field".into() });
            }
        }
        Ok(doc)
    }

    /// Checks every document invariant; an empty report means valid.
    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        if self.schema_version != SCHEMA_VERSION {
            r.push("$.schema_version".into(), format!("expected {SCHEMA_VERSION}"));
        }
        if self.chapters.is_empty() {
            r.push("$.chapters".into(), "document has no chapters");
        }
        let mut titles: BTreeMap<&str, usize> = BTreeMap::new();
        let mut rec_paths: BTreeMap<&str, String> = BTreeMap::new();
        for (ci, ch) in self.chapters.iter().enumerate() {
            let cp = format!("$.chapters[{ci}]");
            if let Some(prev) = titles.insert(ch.title.as_str(), ci) {
                r.push(format!("{cp}.title"), format!("duplicate chapter title (also $.chapters[{prev}])"));
            }
            if ch.chapter_id.is_empty() {
                r.push(format!("{cp}.chapter_id"), "empty chapter id");
            }
            for (gi, g) in ch.groups.iter().enumerate() {
                let gp = format!("{cp}.groups[{gi}]");
                if g.recommendations.is_empty() {
                    r.push(gp.clone(), "recommendation group is empty");
                }
                for (ri, rec) in g.recommendations.iter().enumerate() {
                    let rp = format!("{gp}.recommendations[{ri}]");
                    if rec.text.trim().is_empty() {
                        r.push(format!("{rp}.text"), "empty recommendation text");
                    }
                    if !REC_ID.is_match(&rec.rec_id) {
                        r.push(format!("{rp}.rec_id"), format!("`{}` is not chapter.group.ordinal", rec.rec_id));
                    }
                    if let Some(prev) = rec_paths.get(rec.rec_id.as_str()) {
                        r.push(format!("{rp}.rec_id"), format!("duplicate rec_id `{}` (also {prev})", rec.rec_id));
                    } else {
                        rec_paths.insert(&rec.rec_id, rp.clone());
                    }
                    if parse_numeric_phrases(&rec.text) != rec.numeric_constraints {
                        r.push(format!("{rp}.numeric_constraints"), "cache does not match the text");
                    }
                }
            }
        }
        r
    }
}

/// `a.b[0].c` from serde_path_to_error becomes `$.a.b[0].c`.
fn json_path(p: &str) -> String {
    if p == "." || p.is_empty() {
        "$".into()
    } else {
        format!("$.{p}")
    }
}

fn first_unknown(input: &Value, known: &Value, path: &str) -> Option<String> {
    match (input, known) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                let p = format!("{path}.{k}");
                match b.get(k) {
                    None => return Some(p),
                    Some(kv) => {
                        if let Some(found) = first_unknown(v, kv, &p) {
                            return Some(found);
                        }
                    }
                }
            }
            None
        }
        (Value::Array(a), Value::Array(b)) => a
            .iter()
            .zip(b)
            .enumerate()
            .find_map(|(i, (x, y))| first_unknown(x, y, &format!("{path}[{i}]"))),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> GuidelineDoc {
        GuidelineDoc {
            schema_version: SCHEMA_VERSION,
            doc_id: "d".into(),
            title: "T".into(),
            year: Some(2021),
            chapters: vec![Chapter {
                chapter_id: "9".into(),
                title: "Nine".into(),
                groups: vec![RecommendationGroup {
                    group_id: "9.1".into(),
                    topic: "Topic".into(),
                    recommendations: vec![
                        Recommendation::new("9.1.1".into(), "A1C greater than 9%".into(), Grade::A),
                        Recommendation::new("9.1.2".into(), "Plain text".into(), Grade::Ungraded),
                    ],
                }],
                free_text_sections: vec![],
            }],
        }
    }

    #[test]
    fn round_trip() {
        let d = doc();
        assert_eq!(GuidelineDoc::from_json(&d.to_json(), true).unwrap(), d);
        assert!(d.validate().is_valid());
    }

    #[test]
    fn missing_text_has_path() {
        let mut v = serde_json::to_value(doc()).unwrap();
        v["chapters"][0]["groups"][0]["recommendations"][1].as_object_mut().unwrap().remove("text");
        let err = GuidelineDoc::from_json(&serde_json::to_vec(&v).unwrap(), true).unwrap_err();
        match err {
            GuidelineError::Validation { path, message } => {
                assert_eq!(path, "$.chapters[0].groups[0].recommendations[1]");
                assert!(message.contains("text"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn strict_rejects_unknown_fields() {
        let mut v = serde_json::to_value(doc()).unwrap();
        v["chapters"][0]["groups"][0]["colour"] = "red".into();
        let bytes = serde_json::to_vec(&v).unwrap();
        let err = GuidelineDoc::from_json(&bytes, true).unwrap_err();
        assert_eq!(
            err,
            GuidelineError::Validation { path: "$.chapters[0].groups[0].colour".into(), message: "unknown field".into() }
        );
        assert!(GuidelineDoc::from_json(&bytes, false).is_ok());
    }

    #[test]
    fn version_two_unsupported() {
        let mut v = serde_json::to_value(doc()).unwrap();
        v["schema_version"] = "2".into();
        let err = GuidelineDoc::from_json(&serde_json::to_vec(&v).unwrap(), true).unwrap_err();
        assert!(matches!(err, GuidelineError::UnsupportedVersion(_)));
    }

    #[test]
    fn duplicate_rec_id_names_both_paths() {
        let mut d = doc();
        d.chapters[0].groups[0].recommendations[1].rec_id = "9.1.1".into();
        let r = d.validate();
        assert_eq!(r.violations.len(), 1);
        let v = &r.violations[0];
        assert_eq!(v.path, "$.chapters[0].groups[0].recommendations[1].rec_id");
        assert!(v.message.contains("$.chapters[0].groups[0].recommendations[0]"));
    }

    #[test]
    fn empty_group_and_stale_cache() {
        let mut d = doc();
        d.chapters[0].groups.push(RecommendationGroup { group_id: "9.2".into(), topic: "x".into(), recommendations: vec![] });
        assert_eq!(d.validate().violations.len(), 1);
        let mut d = doc();
        d.chapters[0].groups[0].recommendations[0].numeric_constraints.clear();
        assert_eq!(d.validate().violations[0].path, "$.chapters[0].groups[0].recommendations[0].numeric_constraints");
    }
}
