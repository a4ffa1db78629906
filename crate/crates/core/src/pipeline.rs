//! Pipeline stages over the artifact store. The CLI and the service job
//! executor both call these, so equal inputs give byte-identical snapshots.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{build_features, generate_claims, read_ndjson, select_cohort, write_ndjson, CcsMap, FeatureMatrix};
use crate::config::PipelineConfig;
use crate::context::{AnswerBundle, Contextualizer, LabOverrides, Routed, Stores, Templates};
use crate::error::PipelineError;
use crate::explain::{
    attribute, explain_cohort, select_prototypes, Attribution, ExplanationSet, FeatureImportance, Prototype,
};
use crate::guideline::{parse_html, GuidelineDoc, ParseConfig, ParseReport, FIXTURE_HTML, FIXTURE_PARSE_CONFIG};
use crate::qa::{Answerer, Bm25Index, RankedAnswer};
use crate::risk::{evaluate, split_data, train_selected, MetricsReport, ModelKind, Predictor, RiskModel, Split};
use crate::store::{artifact, Snapshot, Store};

pub mod job {
    pub const GENERATE: &str = "generate-data";
    pub const COHORT: &str = "build-cohort";
    pub const TRAIN: &str = "train";
    pub const EXPLAIN: &str = "explain";
    pub const INGEST: &str = "ingest-guidelines";
}

/// What a stage wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub snapshot: String,
    pub written: Vec<String>,
    pub removed: Vec<String>,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortReport {
    pub n_input: usize,
    pub n_members: usize,
    /// Excluded patients by first failing criterion.
    pub exclusions: BTreeMap<String, usize>,
    pub n_positive: usize,
    pub n_features: usize,
    pub dropped_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetrics {
    pub model_kind: ModelKind,
    pub validation: MetricsReport,
    pub test: MetricsReport,
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("artifact serialises");
    b.push(b'\n');
    b
}

fn decode<T: serde::de::DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<T, PipelineError> {
    serde_json::from_slice(bytes).map_err(|e| PipelineError::Corrupt { artifact: name.into(), message: e.to_string() })
}

fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| PipelineError::io(path, e))
}

fn require(snap: &Snapshot, name: &str, job: &str) -> Result<Vec<u8>, PipelineError> {
    snap.read(name)?.ok_or_else(|| PipelineError::missing(name, job))
}

fn all_model_artifacts() -> Vec<String> {
    [ModelKind::LR, ModelKind::MLP].into_iter().flat_map(|k| [artifact::model(k), artifact::metrics(k)]).collect()
}

fn commit(
    store: &Store,
    stage: &str,
    updates: Vec<(String, Vec<u8>)>,
    removals: Vec<String>,
    detail: serde_json::Value,
) -> Result<StageReport, PipelineError> {
    let base = store.current()?;
    let written: Vec<String> = updates.iter().map(|(n, _)| n.clone()).collect();
    let removed: Vec<String> = removals.into_iter().filter(|r| base.has(r) && !written.contains(r)).collect();
    let refs: Vec<&str> = removed.iter().map(String::as_str).collect();
    let snap = store.commit(updates, &refs)?;
    Ok(StageReport { stage: stage.into(), snapshot: snap.id, written, removed, detail })
}

/// The configured crosswalk, or the bundled one.
pub fn config_ccs_map(cfg: &PipelineConfig) -> Result<CcsMap, PipelineError> {
    match &cfg.ccs_map {
        Some(p) => Ok(CcsMap::from_json(&read_file(p)?)?),
        None => Ok(CcsMap::fixture()),
    }
}

/// Synthetic claims with the planted risk function.
pub fn generate_data(store: &Store, cfg: &PipelineConfig) -> Result<StageReport, PipelineError> {
    let map = config_ccs_map(cfg)?;
    let records = generate_claims(&cfg.synth, &map)?;
    let mut claims = Vec::new();
    write_ndjson(&mut claims, &records)?;
    let mut removals: Vec<String> =
        [artifact::COHORT, artifact::FEATURES, artifact::SPLIT, artifact::EXPLANATIONS].map(String::from).to_vec();
    removals.extend(all_model_artifacts());
    commit(
        store,
        job::GENERATE,
        vec![(artifact::CLAIMS.into(), claims), (artifact::CCS_MAP.into(), map.to_json())],
        removals,
        serde_json::json!({ "n_patients": records.len(), "seed": cfg.synth.seed }),
    )
}

/// Cohort selection, outcome labels and the feature matrix.
pub fn build_cohort(store: &Store, cfg: &PipelineConfig) -> Result<StageReport, PipelineError> {
    let snap = store.current()?;
    let claims = require(&snap, artifact::CLAIMS, job::GENERATE)?;
    let map = match (&cfg.ccs_map, snap.read(artifact::CCS_MAP)?) {
        (None, Some(bytes)) => CcsMap::from_json(&bytes)?,
        _ => config_ccs_map(cfg)?,
    };
    let records = read_ndjson(claims.as_slice())?;
    let cohort = select_cohort(&records, &cfg.cohort);
    let build = build_features(&cohort, &map, &cfg.cohort)?;
    let report = CohortReport {
        n_input: cohort.n_input,
        n_members: cohort.members.len(),
        exclusions: cohort.exclusions.iter().map(|(r, n)| (r.as_str().to_string(), *n)).collect(),
        n_positive: build.matrix.labels.iter().filter(|&&y| y == 1).count(),
        n_features: build.matrix.width(),
        dropped_features: build.dropped.clone(),
    };
    log::info!("cohort: {} of {} patients, {} features", report.n_members, report.n_input, report.n_features);
    let mut removals: Vec<String> = [artifact::SPLIT, artifact::EXPLANATIONS].map(String::from).to_vec();
    removals.extend(all_model_artifacts());
    commit(
        store,
        job::COHORT,
        vec![
            (artifact::COHORT.into(), json_bytes(&report)),
            (artifact::FEATURES.into(), json_bytes(&build.matrix)),
            (artifact::CCS_MAP.into(), map.to_json()),
        ],
        removals,
        serde_json::to_value(&report).expect("report serialises"),
    )
}

/// Splits the feature matrix, trains one model kind with learning-rate
/// selection on validation and records validation and test metrics.
pub fn train(store: &Store, cfg: &PipelineConfig, kind: ModelKind) -> Result<StageReport, PipelineError> {
    let snap = store.current()?;
    let matrix: FeatureMatrix = decode(artifact::FEATURES, &require(&snap, artifact::FEATURES, job::COHORT)?)?;
    let split = split_data(matrix.n_rows(), cfg.model.split, cfg.model.split_seed)?;
    let model =
        train_selected(kind, &matrix.feature_names, &matrix.rows, &matrix.labels, &split, &cfg.model, cfg.model.seed)?;
    let metrics = model_metrics(&model, &matrix, &split, cfg.model.threshold)?;
    log::info!("{kind}: test AUC-ROC {:.4}, AUC-PRC {:.4}", metrics.test.auc_roc, metrics.test.auc_prc);

    let split_bytes = json_bytes(&split);
    let mut removals = Vec::new();
    if let Some(bytes) = snap.read(artifact::EXPLANATIONS)? {
        let e: ExplanationSet = decode(artifact::EXPLANATIONS, &bytes)?;
        if e.model_kind == kind {
            removals.push(artifact::EXPLANATIONS.to_string());
        }
    }
    // A new split invalidates models trained on the old one.
    if snap.read(artifact::SPLIT)?.is_some_and(|old| old != split_bytes) {
        removals.extend(all_model_artifacts());
        removals.push(artifact::EXPLANATIONS.into());
    }
    commit(
        store,
        job::TRAIN,
        vec![
            (artifact::SPLIT.into(), split_bytes),
            (artifact::model(kind), model.to_json()),
            (artifact::metrics(kind), json_bytes(&metrics)),
        ],
        removals,
        serde_json::to_value(&metrics).expect("metrics serialise"),
    )
}

pub fn model_metrics(
    model: &RiskModel,
    matrix: &FeatureMatrix,
    split: &Split,
    threshold: f64,
) -> Result<ModelMetrics, PipelineError> {
    let eval = |idx: &[usize]| {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| matrix.rows[i].as_slice()).collect();
        let labels: Vec<u8> = idx.iter().map(|&i| matrix.labels[i]).collect();
        evaluate(model, &rows, &labels, threshold)
    };
    Ok(ModelMetrics { model_kind: model.kind, validation: eval(&split.validation)?, test: eval(&split.test)? })
}

/// Prototypes and attributions for the high-risk test pool.
pub fn explain(store: &Store, cfg: &PipelineConfig, kind: ModelKind) -> Result<StageReport, PipelineError> {
    let snap = store.current()?;
    let loaded = Loaded::load(snap, cfg)?;
    let model = loaded.require_model(kind)?;
    let matrix = loaded.require_features()?;
    let split = loaded.require_split()?;
    let map = loaded.require_ccs_map()?;
    let set = explain_cohort(model, matrix, split, map, &cfg.explain)?;
    let detail = serde_json::json!({
        "model_kind": kind,
        "pool": set.pool.len(),
        "prototypes": set.prototypes.len(),
    });
    commit(store, job::EXPLAIN, vec![(artifact::EXPLANATIONS.into(), set.to_json())], Vec::new(), detail)
}

/// Parses the guideline HTML into the recommendation store.
pub fn ingest_guidelines(store: &Store, cfg: &PipelineConfig) -> Result<StageReport, PipelineError> {
    let html = match &cfg.guidelines.html {
        Some(p) => read_file(p)?,
        None => FIXTURE_HTML.to_vec(),
    };
    let parse_cfg = match &cfg.guidelines.parse_config {
        Some(p) => ParseConfig::from_json(&read_file(p)?)?,
        None => ParseConfig::from_json(FIXTURE_PARSE_CONFIG)?,
    };
    let (doc, report) = parse_html(&html, &parse_cfg)?;
    let validation = doc.validate();
    if !validation.is_valid() {
        let v = &validation.violations[0];
        return Err(crate::guideline::GuidelineError::Validation { path: v.path.clone(), message: v.message.clone() }
            .into());
    }
    // The index must build from what was parsed.
    Bm25Index::from_doc(&doc, cfg.qa.clone())?;
    let detail = serde_json::json!({
        "chapters": doc.chapters.len(),
        "recommendations": doc.recommendation_count(),
        "skipped": report.skipped.len(),
    });
    commit(
        store,
        job::INGEST,
        vec![(artifact::GUIDELINES.into(), doc.to_json()), (artifact::PARSE_REPORT.into(), json_bytes(&report))],
        Vec::new(),
        detail,
    )
}

/// Question templates and lab overrides named by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextInputs {
    pub templates: Templates,
    pub lab_overrides: LabOverrides,
}

impl ContextInputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let templates = match &cfg.context.templates {
            Some(p) => Templates::from_json(&read_file(p)?)?,
            None => Templates::default(),
        };
        let lab_overrides = match &cfg.context.lab_overrides {
            Some(p) => decode(&p.display().to_string(), &read_file(p)?)?,
            None => LabOverrides::new(),
        };
        Ok(Self { templates, lab_overrides })
    }
}

/// Every artifact of one snapshot, decoded. Absent artifacts are `None`.
#[derive(Debug)]
pub struct Loaded {
    pub snapshot: Snapshot,
    pub ccs_map: Option<CcsMap>,
    pub cohort: Option<CohortReport>,
    pub features: Option<FeatureMatrix>,
    pub split: Option<Split>,
    pub models: BTreeMap<ModelKind, RiskModel>,
    pub metrics: BTreeMap<ModelKind, ModelMetrics>,
    pub explanations: Option<ExplanationSet>,
    pub guidelines: Option<GuidelineDoc>,
    pub parse_report: Option<ParseReport>,
    pub index: Option<Bm25Index>,
    pub active_model: ModelKind,
}

impl Loaded {
    pub fn load(snapshot: Snapshot, cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        fn opt<T: serde::de::DeserializeOwned>(s: &Snapshot, name: &str) -> Result<Option<T>, PipelineError> {
            s.read(name)?.map(|b| decode(name, &b)).transpose()
        }
        let ccs_map = snapshot.read(artifact::CCS_MAP)?.map(|b| CcsMap::from_json(&b)).transpose()?;
        let mut models = BTreeMap::new();
        let mut metrics = BTreeMap::new();
        for kind in [ModelKind::LR, ModelKind::MLP] {
            if let Some(b) = snapshot.read(&artifact::model(kind))? {
                models.insert(kind, RiskModel::from_json(&b)?);
            }
            if let Some(m) = opt(&snapshot, &artifact::metrics(kind))? {
                metrics.insert(kind, m);
            }
        }
        let guidelines = match snapshot.read(artifact::GUIDELINES)? {
            Some(b) => Some(GuidelineDoc::from_json(&b, true)?),
            None => None,
        };
        let index = guidelines.as_ref().map(|d| Bm25Index::from_doc(d, cfg.qa.clone())).transpose()?;
        Ok(Self {
            ccs_map,
            cohort: opt(&snapshot, artifact::COHORT)?,
            features: opt(&snapshot, artifact::FEATURES)?,
            split: opt(&snapshot, artifact::SPLIT)?,
            models,
            metrics,
            explanations: opt(&snapshot, artifact::EXPLANATIONS)?,
            parse_report: opt(&snapshot, artifact::PARSE_REPORT)?,
            guidelines,
            index,
            active_model: cfg.active_model,
            snapshot,
        })
    }

    pub fn current(store: &Store, cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        Self::load(store.current()?, cfg)
    }

    pub fn require_ccs_map(&self) -> Result<&CcsMap, PipelineError> {
        self.ccs_map.as_ref().ok_or_else(|| PipelineError::missing(artifact::CCS_MAP, job::COHORT))
    }

    pub fn require_cohort(&self) -> Result<&CohortReport, PipelineError> {
        self.cohort.as_ref().ok_or_else(|| PipelineError::missing(artifact::COHORT, job::COHORT))
    }

    pub fn require_features(&self) -> Result<&FeatureMatrix, PipelineError> {
        self.features.as_ref().ok_or_else(|| PipelineError::missing(artifact::FEATURES, job::COHORT))
    }

    pub fn require_split(&self) -> Result<&Split, PipelineError> {
        self.split.as_ref().ok_or_else(|| PipelineError::missing(artifact::SPLIT, job::TRAIN))
    }

    pub fn require_model(&self, kind: ModelKind) -> Result<&RiskModel, PipelineError> {
        self.models.get(&kind).ok_or_else(|| PipelineError::missing(&artifact::model(kind), job::TRAIN))
    }

    pub fn require_metrics(&self, kind: ModelKind) -> Result<&ModelMetrics, PipelineError> {
        self.metrics.get(&kind).ok_or_else(|| PipelineError::missing(&artifact::model(kind), job::TRAIN))
    }

    pub fn require_explanations(&self) -> Result<&ExplanationSet, PipelineError> {
        self.explanations.as_ref().ok_or_else(|| PipelineError::missing(artifact::EXPLANATIONS, job::EXPLAIN))
    }

    pub fn require_index(&self) -> Result<&Bm25Index, PipelineError> {
        self.index.as_ref().ok_or_else(|| PipelineError::missing(artifact::GUIDELINES, job::INGEST))
    }

    /// Model the explanations were built with, else the configured one.
    pub fn explained_model(&self) -> ModelKind {
        self.explanations.as_ref().map_or(self.active_model, |e| e.model_kind)
    }

    fn row(&self, patient_id: &str) -> Result<&[f64], PipelineError> {
        let m = self.require_features()?;
        let i = m.row_of(patient_id).ok_or_else(|| PipelineError::NotFound { what: "patient", id: patient_id.into() })?;
        Ok(&m.rows[i])
    }

    /// Predicted CKD risk of one cohort patient.
    pub fn risk(&self, patient_id: &str, kind: ModelKind) -> Result<f64, PipelineError> {
        let model = self.require_model(kind)?;
        let row = self.row(patient_id)?;
        Ok(model.predict_proba(row)?)
    }

    /// Stored attribution when the patient is a prototype, otherwise
    /// computed against the stored reference.
    pub fn explanation(&self, patient_id: &str) -> Result<Attribution, PipelineError> {
        let kind = self.explained_model();
        let model = self.require_model(kind)?;
        let row = self.row(patient_id)?;
        let e = self.require_explanations()?;
        if let Some(a) = e.attribution_for(patient_id) {
            return Ok(a.clone());
        }
        Ok(attribute(model, patient_id, row, &e.reference, &e.config)?)
    }

    /// `min(k, pool)` prototypes; reselected over the stored pool when `k`
    /// differs from the stored selection.
    pub fn prototypes(&self, k: usize) -> Result<Vec<Prototype>, PipelineError> {
        let e = self.require_explanations()?;
        if k == e.config.k || (k >= e.prototypes.len() && e.prototypes.len() == e.pool.len()) {
            return Ok(e.prototypes.clone());
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let m = self.require_features()?;
        let model = self.require_model(e.model_kind)?;
        let rows: Vec<&[f64]> = e
            .pool
            .iter()
            .map(|id| {
                m.row_of(id).map(|i| m.rows[i].as_slice()).ok_or_else(|| PipelineError::Corrupt {
                    artifact: artifact::EXPLANATIONS.into(),
                    message: format!("pool patient `{id}` is not in the feature matrix"),
                })
            })
            .collect::<Result<_, _>>()?;
        let set = select_prototypes(&rows, k, &e.config)?;
        Ok(set
            .indices
            .iter()
            .zip(&set.weights)
            .map(|(&p, &w)| Prototype { patient_id: e.pool[p].clone(), weight: w, risk: model.predict(rows[p]) })
            .collect())
    }

    /// Stored aggregate importances, truncated to `top`.
    pub fn aggregate(&self, top: usize) -> Result<Vec<FeatureImportance>, PipelineError> {
        let e = self.require_explanations()?;
        Ok(e.aggregate.iter().take(top).cloned().collect())
    }

    pub fn ask(&self, question: &str, k: usize) -> Result<Vec<RankedAnswer>, PipelineError> {
        Ok(self.require_index()?.ask(question, k)?)
    }

    /// Answers one routed question against this snapshot.
    pub fn answer(
        &self,
        cfg: &PipelineConfig,
        inputs: &ContextInputs,
        routed: &Routed,
        patient_id: Option<&str>,
    ) -> Result<AnswerBundle, PipelineError> {
        let stores = Stores {
            snapshot: &self.snapshot.id,
            features: self.features.as_ref(),
            ccs_map: self.ccs_map.as_ref(),
            model: self.models.get(&self.explained_model()),
            explanations: self.explanations.as_ref(),
            guidelines: self.index.as_ref().map(|i| i as &dyn Answerer),
            lab_overrides: &inputs.lab_overrides,
        };
        let ctx = Contextualizer::new(stores, &cfg.context, &inputs.templates);
        Ok(ctx.answer(routed, patient_id)?)
    }
}
