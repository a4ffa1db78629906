//! Batch report over one snapshot: model metrics, prototype summary,
//! aggregate importances and the question flow, in that order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::context::{route, AnswerBundle, PartPayload, QuestionKind};
use crate::error::PipelineError;
use crate::explain::{FeatureImportance, PrototypeSummary};
use crate::pipeline::{ContextInputs, Loaded, ModelMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Metrics,
    Prototypes,
    AggregateImportance,
    QuestionFlow,
}

impl Section {
    pub const ALL: [Section; 4] =
        [Section::Metrics, Section::Prototypes, Section::AggregateImportance, Section::QuestionFlow];

    pub fn name(self) -> &'static str {
        match self {
            Section::Metrics => "metrics",
            Section::Prototypes => "prototypes",
            Section::AggregateImportance => "aggregate_importance",
            Section::QuestionFlow => "question_flow",
        }
    }
}

impl std::str::FromStr for Section {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Section::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown section `{s}` (expected one of metrics, prototypes, aggregate_importance, question_flow)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Markdown,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "markdown" | "md" => Ok(Format::Markdown),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected markdown or json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub sections: Vec<Section>,
    pub format: Format,
    /// Patient for the question flow; the first prototype when absent.
    pub patient_id: Option<String>,
    pub top: usize,
}

impl ReportSpec {
    pub fn new(sections: Vec<Section>, format: Format) -> Self {
        Self { sections, format, patient_id: None, top: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub code: String,
    pub bundle: AnswerBundle,
}

/// Report content before rendering. Sections not requested are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub snapshot: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Vec<ModelMetrics>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prototypes: Option<PrototypeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate_importance: Option<Vec<FeatureImportance>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question_flow: Option<Vec<FlowEntry>>,
}

pub fn build(
    loaded: &Loaded,
    cfg: &PipelineConfig,
    inputs: &ContextInputs,
    spec: &ReportSpec,
) -> Result<Report, PipelineError> {
    if spec.sections.is_empty() {
        return Err(PipelineError::Config { path: "sections".into(), message: "at least one section is required".into() });
    }
    let want = |s: Section| spec.sections.contains(&s);
    let mut report = Report {
        snapshot: loaded.snapshot.id.clone(),
        metrics: None,
        prototypes: None,
        aggregate_importance: None,
        question_flow: None,
    };
    if want(Section::Metrics) {
        if loaded.metrics.is_empty() {
            loaded.require_metrics(cfg.active_model)?;
        }
        report.metrics = Some(loaded.metrics.values().cloned().collect());
    }
    if want(Section::Prototypes) {
        report.prototypes = Some(loaded.require_explanations()?.summary.clone());
    }
    if want(Section::AggregateImportance) {
        report.aggregate_importance = Some(loaded.aggregate(spec.top)?);
    }
    if want(Section::QuestionFlow) {
        let patient = match &spec.patient_id {
            Some(p) => p.clone(),
            None => loaded
                .require_explanations()?
                .prototypes
                .first()
                .map(|p| p.patient_id.clone())
                .ok_or_else(|| PipelineError::missing("prototypes", crate::pipeline::job::EXPLAIN))?,
        };
        let mut flow = Vec::new();
        for kind in QuestionKind::NAMED {
            let pid = kind.needs_patient().then_some(patient.as_str());
            let bundle = loaded.answer(cfg, inputs, &route(kind.code()), pid)?;
            flow.push(FlowEntry { code: kind.code().into(), bundle });
        }
        report.question_flow = Some(flow);
    }
    Ok(report)
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serialises");
            s.push('\n');
            s
        }
        Format::Markdown => markdown(report),
    }
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', "<br>")
}

fn markdown(r: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# CKD risk report\n\nSnapshot `{}`", r.snapshot);
    if let Some(metrics) = &r.metrics {
        let _ = writeln!(out, "\n## Model performance (test split)\n");
        let _ = writeln!(out, "| Method | Precision | Recall | AUC-ROC | AUC-PRC | Brier |");
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for m in metrics {
            let t = &m.test;
            let _ = writeln!(
                out,
                "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |",
                m.model_kind, t.precision, t.recall, t.auc_roc, t.auc_prc, t.brier
            );
        }
    }
    if let Some(s) = &r.prototypes {
        let _ = writeln!(out, "\n## Prototype summary\n");
        let _ = writeln!(out, "| Feature | Count (%) |");
        let _ = writeln!(out, "|---|---|");
        let _ = writeln!(out, "| n | {} |", s.n);
        for row in &s.rows {
            let c = s.cell(row.count);
            if row.flagged {
                let _ = writeln!(out, "| **{}** | **{c}** |", cell(&row.label));
            } else {
                let _ = writeln!(out, "| {} | {c} |", cell(&row.label));
            }
        }
        let _ = writeln!(out, "\nBold rows: prevalence at or above {}%.", s.cutoff_pct);
    }
    if let Some(items) = &r.aggregate_importance {
        let _ = writeln!(out, "\n## Top {} features (mean |phi| over prototypes)\n", items.len());
        let _ = writeln!(out, "| Rank | Feature | Mean abs phi |");
        let _ = writeln!(out, "|---|---|---|");
        for (i, f) in items.iter().enumerate() {
            let _ = writeln!(out, "| {} | {} | {:.4} |", i + 1, cell(&f.feature), f.mean_abs_phi);
        }
    }
    if let Some(flow) = &r.question_flow {
        let _ = writeln!(out, "\n## Question flow\n");
        let _ = writeln!(out, "| Question | Annotations | Answers |");
        let _ = writeln!(out, "|---|---|---|");
        for e in flow {
            let b = &e.bundle;
            let _ = writeln!(
                out,
                "| {}. {} | {} | {} |",
                e.code,
                cell(&b.question),
                cell(&b.annotation.to_string()),
                cell(&brief(b))
            );
        }
    }
    out
}

/// One line per part, for a table cell.
fn brief(b: &AnswerBundle) -> String {
    let mut lines = Vec::new();
    for p in &b.parts {
        lines.push(match &p.payload {
            PartPayload::RiskScore { risk, model_kind, .. } => {
                format!("CKD risk {} ({model_kind})", crate::context::format_risk(*risk))
            }
            PartPayload::FeatureImportance { items, .. } => {
                let top: Vec<&str> = items.iter().take(5).map(|f| f.feature.as_str()).collect();
                format!("Top features: {}", top.join(", "))
            }
            PartPayload::PrototypeSummary(s) => format!("See prototype summary (n = {})", s.n),
            PartPayload::GuidelineText(a) => format!("{} (grade {}) [{}]", a.answer_text, a.grade, a.rec_id),
            PartPayload::CohortStat { title, entries } => {
                let shown: Vec<String> = entries
                    .iter()
                    .filter(|e| e.flagged || e.count.is_some())
                    .map(|e| match &e.note {
                        Some(n) => format!("{} ({n})", e.label),
                        None => e.label.clone(),
                    })
                    .collect();
                format!("{title}: {}", if shown.is_empty() { "none".into() } else { shown.join("; ") })
            }
            PartPayload::TemplatedText { text, .. } => text.clone(),
        });
    }
    lines.join("\n")
}

