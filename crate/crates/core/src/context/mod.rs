//! Clinician question flow: routes each question kind to its backing
//! modules and composes the answer bundle.

mod answer;
mod bundle;
mod templates;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use answer::{Contextualizer, Stores};
pub use bundle::{AnswerBundle, Part, PartKind, PartPayload, Provenance, SlotSource, SlotValue, StatEntry};
pub(crate) use bundle::format_risk;
pub use templates::{fill, Templates, FIXTURE_TEMPLATES};

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("question kind {0} needs a patient_id")]
    PatientRequired(String),
    #[error("patient `{0}` not found")]
    UnknownPatient(String),
    /// A backing store has not been built.
    #[error("store `{store}` is not loaded; run `{job}` first")]
    Dependency { store: &'static str, job: &'static str },
    #[error("template error: {0}")]
    Template(String),
    #[error("invalid bundle: {0}")]
    Bundle(String),
    #[error("unknown question kind `{0}`")]
    UnknownKind(String),
    #[error(transparent)]
    Qa(#[from] crate::qa::QaError),
    #[error(transparent)]
    Explain(#[from] crate::explain::ExplainError),
    #[error(transparent)]
    Model(#[from] crate::risk::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Algorithmic,
    Guidelines,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relevance {
    T2DM,
    CKD,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    Patient,
    RiskPrediction,
    PostHocExplanation,
}

impl Dimension {
    pub fn label(self) -> &'static str {
        match self {
            Dimension::Patient => "patient",
            Dimension::RiskPrediction => "risk prediction",
            Dimension::PostHocExplanation => "post-hoc explanation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionAnnotation {
    pub source: Source,
    pub relevance: Relevance,
    pub dimension: BTreeSet<Dimension>,
}

impl fmt::Display for QuestionAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<&str> = self.dimension.iter().map(|d| d.label()).collect();
        write!(
            f,
            "Source: {:?} | Relevance: {:?} | Contextualization: {}",
            self.source,
            self.relevance,
            dims.join(" + ")
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionKind {
    PrototypeOverview,
    RiskRationale,
    PatientDescription,
    LabThresholdGuideline,
    DrugViability,
    ComplicationTreatment,
    TreatmentGoals,
    FreeText,
}

impl QuestionKind {
    pub const NAMED: [QuestionKind; 7] = [
        QuestionKind::PrototypeOverview,
        QuestionKind::RiskRationale,
        QuestionKind::PatientDescription,
        QuestionKind::LabThresholdGuideline,
        QuestionKind::DrugViability,
        QuestionKind::ComplicationTreatment,
        QuestionKind::TreatmentGoals,
    ];

    /// Short code in the question flow: Q1 … Q6, with Q3a between Q3 and Q4.
    pub fn code(self) -> &'static str {
        match self {
            QuestionKind::PrototypeOverview => "Q1",
            QuestionKind::RiskRationale => "Q2",
            QuestionKind::PatientDescription => "Q3",
            QuestionKind::LabThresholdGuideline => "Q3a",
            QuestionKind::DrugViability => "Q4",
            QuestionKind::ComplicationTreatment => "Q5",
            QuestionKind::TreatmentGoals => "Q6",
            QuestionKind::FreeText => "FreeText",
        }
    }

    /// Accepts a code (`Q3a`, case-insensitive) or a variant name.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        Self::NAMED
            .into_iter()
            .chain([QuestionKind::FreeText])
            .find(|k| k.code().eq_ignore_ascii_case(s) || format!("{k:?}").eq_ignore_ascii_case(s))
    }

    pub fn annotation(self) -> QuestionAnnotation {
        use Dimension::*;
        let (source, relevance, dims): (Source, Relevance, &[Dimension]) = match self {
            QuestionKind::PrototypeOverview => (Source::Algorithmic, Relevance::Both, &[PostHocExplanation]),
            QuestionKind::RiskRationale => (Source::Algorithmic, Relevance::CKD, &[RiskPrediction]),
            QuestionKind::PatientDescription => (Source::Algorithmic, Relevance::T2DM, &[RiskPrediction]),
            QuestionKind::LabThresholdGuideline => (Source::Guidelines, Relevance::T2DM, &[Patient]),
            QuestionKind::DrugViability => (Source::Guidelines, Relevance::Both, &[Patient, RiskPrediction]),
            QuestionKind::ComplicationTreatment => (Source::Guidelines, Relevance::Both, &[Patient, RiskPrediction]),
            QuestionKind::TreatmentGoals => (Source::Guidelines, Relevance::T2DM, &[Patient]),
            QuestionKind::FreeText => (Source::Guidelines, Relevance::Both, &[Patient]),
        };
        QuestionAnnotation { source, relevance, dimension: dims.iter().copied().collect() }
    }

    pub fn needs_patient(self) -> bool {
        !matches!(self, QuestionKind::PrototypeOverview | QuestionKind::FreeText)
    }
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A question after routing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routed {
    pub kind: QuestionKind,
    pub annotation: QuestionAnnotation,
    /// Free-text input verbatim; `None` for named kinds.
    pub text: Option<String>,
}

/// Named kinds by code or name; anything else is free text.
pub fn route(input: &str) -> Routed {
    match QuestionKind::parse(input).filter(|k| *k != QuestionKind::FreeText) {
        Some(kind) => Routed { kind, annotation: kind.annotation(), text: None },
        None => Routed {
            kind: QuestionKind::FreeText,
            annotation: QuestionKind::FreeText.annotation(),
            text: Some(input.to_string()),
        },
    }
}

/// Derives a lab-style flag from claims when no lab value is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabProxy {
    pub flag: String,
    /// CCS categories whose presence raises the flag.
    pub ccs: Vec<u32>,
    /// Quantity name used in question templates and lab overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<String>,
    /// Threshold the flag stands for; an override value above it raises
    /// the flag, and a proxy-raised flag interpolates it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// Per-patient lab values: patient id → quantity → value.
pub type LabOverrides = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    /// Template JSON; the bundled templates when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    /// Lab override JSON (`{patient: {quantity: value}}`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lab_overrides: Option<PathBuf>,
    pub lab_proxies: Vec<LabProxy>,
    /// Condition groups listed in a patient description.
    pub top_conditions: usize,
    /// Guideline answers kept for a named question.
    pub answers_per_question: usize,
    /// Guideline answers kept for a free-text question.
    pub free_text_answers: usize,
    /// CCS categories never listed as comorbidities (the index condition).
    pub comorbidity_exclude: Vec<u32>,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            templates: None,
            lab_overrides: None,
            lab_proxies: vec![
                LabProxy {
                    flag: "High HbA1C".into(),
                    ccs: vec![50],
                    quantity: Some("a1c".into()),
                    threshold: Some(10.0),
                },
                LabProxy { flag: "Hypertension".into(), ccs: vec![98, 99], quantity: None, threshold: None },
                LabProxy { flag: "Dyslipidemia".into(), ccs: vec![53], quantity: None, threshold: None },
            ],
            top_conditions: 5,
            answers_per_question: 1,
            free_text_answers: 3,
            comorbidity_exclude: vec![49, 50],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_table() {
        use Dimension::*;
        let expect: [(&str, Source, Relevance, &[Dimension]); 7] = [
            ("Q1", Source::Algorithmic, Relevance::Both, &[PostHocExplanation]),
            ("Q2", Source::Algorithmic, Relevance::CKD, &[RiskPrediction]),
            ("Q3", Source::Algorithmic, Relevance::T2DM, &[RiskPrediction]),
            ("Q3a", Source::Guidelines, Relevance::T2DM, &[Patient]),
            ("Q4", Source::Guidelines, Relevance::Both, &[Patient, RiskPrediction]),
            ("Q5", Source::Guidelines, Relevance::Both, &[Patient, RiskPrediction]),
            ("Q6", Source::Guidelines, Relevance::T2DM, &[Patient]),
        ];
        for (code, source, relevance, dims) in expect {
            let r = route(code);
            assert_eq!(r.kind.code(), code);
            assert_eq!(r.annotation.source, source, "{code}");
            assert_eq!(r.annotation.relevance, relevance, "{code}");
            assert_eq!(r.annotation.dimension, dims.iter().copied().collect(), "{code}");
        }
    }

    #[test]
    fn route_accepts_names_and_falls_back_to_free_text() {
        assert_eq!(route("q3A").kind, QuestionKind::LabThresholdGuideline);
        assert_eq!(route("DrugViability").kind, QuestionKind::DrugViability);
        let r = route("Can metformin be continued?");
        assert_eq!(r.kind, QuestionKind::FreeText);
        assert_eq!(r.annotation.source, Source::Guidelines);
        assert_eq!(r.text.as_deref(), Some("Can metformin be continued?"));
        assert_eq!(route("FreeText").kind, QuestionKind::FreeText);
        assert_eq!(QuestionKind::parse("Q9"), None);
    }

    #[test]
    fn annotation_display() {
        let a = QuestionKind::DrugViability.annotation();
        assert_eq!(a.to_string(), "Source: Guidelines | Relevance: Both | Contextualization: patient + risk prediction");
    }

    #[test]
    fn every_annotation_has_a_dimension() {
        for k in QuestionKind::NAMED.into_iter().chain([QuestionKind::FreeText]) {
            assert!(!k.annotation().dimension.is_empty());
        }
    }
}
