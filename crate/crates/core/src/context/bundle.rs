use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{fill, ContextError, QuestionAnnotation, QuestionKind};
use crate::explain::{AttributionMethod, FeatureImportance, PrototypeSummary};
use crate::qa::RankedAnswer;
use crate::risk::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartKind {
    RiskScore,
    FeatureImportance,
    PrototypeSummary,
    GuidelineText,
    CohortStat,
    TemplatedText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatEntry {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<usize>,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum PartPayload {
    RiskScore {
        patient_id: String,
        risk: f64,
        model_kind: ModelKind,
    },
    FeatureImportance {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        patient_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        method: Option<AttributionMethod>,
        items: Vec<FeatureImportance>,
    },
    PrototypeSummary(PrototypeSummary),
    GuidelineText(RankedAnswer),
    CohortStat {
        title: String,
        entries: Vec<StatEntry>,
    },
    TemplatedText {
        template: String,
        slots: BTreeMap<String, String>,
        text: String,
        /// Indices of the earlier parts the slot values come from.
        refs: Vec<usize>,
    },
}

impl PartPayload {
    pub fn kind(&self) -> PartKind {
        match self {
            PartPayload::RiskScore { .. } => PartKind::RiskScore,
            PartPayload::FeatureImportance { .. } => PartKind::FeatureImportance,
            PartPayload::PrototypeSummary(_) => PartKind::PrototypeSummary,
            PartPayload::GuidelineText(_) => PartKind::GuidelineText,
            PartPayload::CohortStat { .. } => PartKind::CohortStat,
            PartPayload::TemplatedText { .. } => PartKind::TemplatedText,
        }
    }
}

/// Where a part came from: the producing module, the artifact it was read
/// from and the ids of the objects used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub module: String,
    pub artifact: String,
    pub ids: Vec<String>,
}

impl Provenance {
    pub fn new(module: &str, artifact: &str, ids: impl IntoIterator<Item = String>) -> Self {
        Self { module: module.into(), artifact: artifact.into(), ids: ids.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    #[serde(flatten)]
    pub payload: PartPayload,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotSource {
    /// From the lab override file.
    Override,
    /// Stood in for by a claims-based proxy flag.
    Proxy,
    /// Configured default; nothing patient-specific was available.
    Default,
    /// Computed from the patient's features or model output.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotValue {
    pub value: String,
    pub source: SlotSource,
}

/// A composed answer. Built through [`AnswerBundle::new`] or
/// [`AnswerBundle::from_json`], both of which enforce the invariants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBundle {
    pub question: String,
    pub kind: QuestionKind,
    pub annotation: QuestionAnnotation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    pub snapshot: String,
    /// Values interpolated into the question or templates.
    #[serde(default)]
    pub slots: BTreeMap<String, SlotValue>,
    pub parts: Vec<Part>,
}

pub(crate) fn format_risk(risk: f64) -> String {
    format!("{risk:.2}")
}

impl AnswerBundle {
    pub fn new(
        question: String,
        kind: QuestionKind,
        patient_id: Option<String>,
        snapshot: String,
        slots: BTreeMap<String, SlotValue>,
        parts: Vec<Part>,
    ) -> Result<Self, ContextError> {
        let b = Self { question, annotation: kind.annotation(), kind, patient_id, snapshot, slots, parts };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), ContextError> {
        let bad = |m: String| Err(ContextError::Bundle(m));
        if self.parts.is_empty() {
            return bad("an answer needs at least one part".into());
        }
        if self.annotation != self.kind.annotation() {
            return bad(format!("annotation does not match {}", self.kind));
        }
        for (i, p) in self.parts.iter().enumerate() {
            if p.provenance.module.is_empty() || p.provenance.artifact.is_empty() {
                return bad(format!("part {i} has no provenance"));
            }
            if let PartPayload::TemplatedText { template, slots, text, refs } = &p.payload {
                if refs.is_empty() || refs.iter().any(|&r| r >= i) {
                    return bad(format!("part {i} must reference earlier parts"));
                }
                if &fill(template, slots)? != text {
                    return bad(format!("part {i} text does not match its template"));
                }
                if let Some(risk) = slots.get("risk") {
                    let backed = refs.iter().any(|&r| {
                        matches!(&self.parts[r].payload, PartPayload::RiskScore { risk: v, .. } if &format_risk(*v) == risk)
                    });
                    if !backed {
                        return bad(format!("part {i} risk slot is not backed by a referenced risk score"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("bundle serialises");
        v.push(b'\n');
        v
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ContextError> {
        let b: Self = serde_json::from_slice(bytes).map_err(|e| ContextError::Bundle(e.to_string()))?;
        b.validate()?;
        Ok(b)
    }

    /// Parts in order, each numbered, followed by provenance footnotes.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}: {}", self.kind, self.question);
        let _ = writeln!(out, "{}", self.annotation);
        if let Some(p) = &self.patient_id {
            let _ = writeln!(out, "Patient: {p}");
        }
        for (i, part) in self.parts.iter().enumerate() {
            let _ = writeln!(out);
            render_part(&mut out, i + 1, &part.payload);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Sources:");
        for (i, part) in self.parts.iter().enumerate() {
            let p = &part.provenance;
            let ids = if p.ids.is_empty() { String::new() } else { format!(" {}", p.ids.join(", ")) };
            let _ = writeln!(out, "[{}] {}: {}{ids}", i + 1, p.module, p.artifact);
        }
        out
    }
}

fn render_part(out: &mut String, n: usize, payload: &PartPayload) {
    match payload {
        PartPayload::RiskScore { patient_id, risk, model_kind } => {
            let _ = writeln!(out, "[{n}] CKD risk for {patient_id}: {} ({model_kind})", format_risk(*risk));
        }
        PartPayload::FeatureImportance { patient_id, items, .. } => {
            let whom = patient_id.as_deref().map_or("prototypes".to_string(), |p| format!("patient {p}"));
            let _ = writeln!(out, "[{n}] Feature importance ({whom}, mean |phi|):");
            let w = items.iter().map(|f| f.feature.len()).max().unwrap_or(0);
            for f in items {
                let _ = writeln!(out, "    {:<w$}  {:.4}", f.feature, f.mean_abs_phi);
            }
        }
        PartPayload::PrototypeSummary(s) => {
            let _ = writeln!(out, "[{n}] Prototype summary:");
            for line in s.render_text().lines() {
                let _ = writeln!(out, "    {line}");
            }
        }
        PartPayload::GuidelineText(a) => {
            let _ = writeln!(out, "[{n}] Recommendation {} (grade {}): {}", a.rec_id, a.grade, a.answer_text);
            let _ = writeln!(
                out,
                "    score {:.3} = lexical {:.3} + numeric {:.3}",
                a.total, a.lexical_score, a.numeric_bonus
            );
            for m in &a.matched_constraints {
                let _ = writeln!(out, "    {}: {} ⊆ {}", m.question.quantity, m.question.interval, m.answer.interval);
            }
        }
        PartPayload::CohortStat { title, entries } => {
            let _ = writeln!(out, "[{n}] {title}:");
            for e in entries {
                let mut line = format!("    {}", e.label);
                if let (Some(c), Some(t)) = (e.count, e.total) {
                    let _ = write!(line, ": {c} of {t}");
                }
                if e.flagged {
                    line.push_str(" *");
                }
                if let Some(note) = &e.note {
                    let _ = write!(line, " ({note})");
                }
                let _ = writeln!(out, "{line}");
            }
        }
        PartPayload::TemplatedText { text, .. } => {
            let _ = writeln!(out, "[{n}] {text}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guideline::Grade;

    fn risk_part(risk: f64) -> Part {
        Part {
            payload: PartPayload::RiskScore { patient_id: "P1".into(), risk, model_kind: ModelKind::MLP },
            provenance: Provenance::new("risk", "model-mlp.json", ["P1".to_string()]),
        }
    }

    fn templated(risk: &str, refs: Vec<usize>) -> Part {
        let template = "risk is found to be {risk}".to_string();
        let slots: BTreeMap<_, _> = [("risk".to_string(), risk.to_string())].into();
        let text = fill(&template, &slots).unwrap();
        Part {
            payload: PartPayload::TemplatedText { template, slots, text, refs },
            provenance: Provenance::new("context", "context_templates.json", ["drug_viability".to_string()]),
        }
    }

    fn guideline_part() -> Part {
        Part {
            payload: PartPayload::GuidelineText(RankedAnswer {
                rec_id: "9.2.4".into(),
                answer_text: "Consider insulin.".into(),
                grade: Grade::E,
                lexical_score: 1.0,
                numeric_bonus: 2.0,
                matched_constraints: vec![],
                total: 3.0,
            }),
            provenance: Provenance::new("qa", "guidelines.json", ["9.2.4".to_string()]),
        }
    }

    fn bundle(parts: Vec<Part>) -> Result<AnswerBundle, ContextError> {
        AnswerBundle::new("q".into(), QuestionKind::DrugViability, Some("P1".into()), "s".into(), BTreeMap::new(), parts)
    }

    #[test]
    fn json_round_trip() {
        let b = bundle(vec![risk_part(0.8349), guideline_part(), templated("0.83", vec![0])]).unwrap();
        let back = AnswerBundle::from_json(&b.to_json()).unwrap();
        assert_eq!(back, b);
        let v: serde_json::Value = serde_json::from_slice(&b.to_json()).unwrap();
        assert_eq!(v["parts"][0]["kind"], "RiskScore");
        assert_eq!(v["parts"][0]["payload"]["risk"], 0.8349);
    }

    #[test]
    fn invariants_enforced_at_construction() {
        assert!(matches!(bundle(vec![]), Err(ContextError::Bundle(_))));
        assert!(bundle(vec![templated("0.83", vec![])]).is_err());
        assert!(bundle(vec![risk_part(0.8), templated("0.83", vec![0])]).is_err());
        assert!(bundle(vec![risk_part(0.83), templated("0.83", vec![1])]).is_err());
        let mut p = risk_part(0.5);
        p.provenance.module.clear();
        assert!(bundle(vec![p]).is_err());
    }

    #[test]
    fn text_rendering_has_footnotes() {
        let b = bundle(vec![risk_part(0.8349), guideline_part(), templated("0.83", vec![0])]).unwrap();
        let t = b.render_text();
        assert!(t.contains("[1] CKD risk for P1: 0.83 (MLP)"));
        assert!(t.contains("[2] Recommendation 9.2.4 (grade E)"));
        assert!(t.contains("[3] risk is found to be 0.83"));
        assert!(t.contains("Sources:\n[1] risk: model-mlp.json P1\n[2] qa: guidelines.json 9.2.4"));
    }

    #[test]
    fn risk_rounds_to_two_decimals() {
        assert_eq!(format_risk(0.8349), "0.83");
        assert_eq!(format_risk(0.8351), "0.84");
        assert_eq!(format_risk(0.83), "0.83");
        assert_eq!(format_risk(1.0), "1.00");
    }
}
