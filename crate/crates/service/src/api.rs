use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use ckdctx_core::context::{route, AnswerBundle, QuestionKind, Routed};
use ckdctx_core::explain::{Attribution, FeatureImportance, Prototype, PrototypeSummary};
use ckdctx_core::guideline::GuidelineDoc;
use ckdctx_core::pipeline::CohortReport;
use ckdctx_core::qa::RankedAnswer;
use ckdctx_core::risk::{MetricsReport, ModelKind};
use ckdctx_core::store::ArtifactEntry;
use schemars::JsonSchema;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::jobs::{JobRecord, Task};
use crate::AppState;

/// JSON body whose decode errors carry the failing field path. An empty
/// body reads as `{}`.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
        let bytes: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { &bytes };
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map(JsonBody).map_err(|e| {
            let path = e.path().to_string();
            let err = ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.inner().to_string());
            if path == "." {
                err
            } else {
                err.with_path(path)
            }
        })
    }
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(t)| t).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum KindParam {
    #[serde(alias = "lr")]
    LR,
    #[serde(alias = "mlp")]
    MLP,
}

impl From<KindParam> for ModelKind {
    fn from(k: KindParam) -> Self {
        match k {
            KindParam::LR => ModelKind::LR,
            KindParam::MLP => ModelKind::MLP,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub seed: Option<u64>,
    pub n_patients: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EmptyRequest {}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    pub kind: KindParam,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    /// Defaults to the configured active model.
    pub kind: Option<KindParam>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AskRequest {
    pub question: String,
    pub k: Option<usize>,
    pub patient_id: Option<String>,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ContextRequest {
    /// `Q1` … `Q6`, `Q3a`, a kind name, or `FreeText`.
    pub kind: String,
    pub patient_id: Option<String>,
    /// Question text; required for `FreeText`.
    pub question: Option<String>,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
pub struct KQuery {
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
pub struct TopQuery {
    pub top: Option<usize>,
}

#[derive(Debug, Clone, Serialize, JsonSchema)]
pub struct SnapshotInfo {
    pub id: String,
    #[schemars(with = "BTreeMap<String, serde_json::Value>")]
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

#[derive(Debug, Clone, Serialize, JsonSchema)]
pub struct PrototypesResponse {
    pub snapshot: String,
    pub model_kind: String,
    pub k: usize,
    pub pool_size: usize,
    #[schemars(with = "Vec<serde_json::Value>")]
    pub prototypes: Vec<Prototype>,
}

#[derive(Debug, Clone, Serialize, JsonSchema)]
pub struct RiskResponse {
    pub snapshot: String,
    pub patient_id: String,
    pub model_kind: String,
    pub risk: f64,
}

#[derive(Debug, Clone, Serialize, JsonSchema)]
pub struct AggregateResponse {
    pub snapshot: String,
    pub model_kind: String,
    #[schemars(with = "Vec<serde_json::Value>")]
    pub items: Vec<FeatureImportance>,
}

#[derive(Debug, Clone, Serialize, JsonSchema)]
pub struct QaResponse {
    pub snapshot: String,
    pub question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    #[schemars(with = "Vec<serde_json::Value>")]
    pub answers: Vec<RankedAnswer>,
}

pub(crate) fn routes() -> Router<AppState> {
    Router::new()
        .route("/spec", get(spec))
        .route("/snapshot", get(snapshot))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/data/generate", post(generate))
        .route("/cohort/build", post(build_cohort))
        .route("/cohort", get(cohort))
        .route("/models/train", post(train))
        .route("/models/{id}/metrics", get(metrics))
        .route("/explanations/build", post(explain))
        .route("/explanations/aggregate", get(aggregate))
        .route("/guidelines/ingest", post(ingest))
        .route("/guidelines", get(guidelines))
        .route("/prototypes", get(prototypes))
        .route("/prototypes/summary", get(prototype_summary))
        .route("/patients/{id}/risk", get(risk))
        .route("/patients/{id}/explanation", get(explanation))
        .route("/qa/ask", post(ask))
        .route("/context/answer", post(context_answer))
}

type Accepted = (StatusCode, Json<JobRecord>);

fn submit(state: &AppState, task: Task, cfg: ckdctx_core::config::PipelineConfig) -> Result<Accepted, ApiError> {
    cfg.validate()?;
    Ok((StatusCode::ACCEPTED, Json(state.jobs().submit(task, cfg)?)))
}

async fn spec() -> Json<serde_json::Value> {
    Json(crate::openapi())
}

async fn snapshot(State(state): State<AppState>) -> Result<Json<SnapshotInfo>, ApiError> {
    let l = state.loaded()?;
    Ok(Json(SnapshotInfo { id: l.snapshot.id.clone(), artifacts: l.snapshot.manifest.artifacts.clone() }))
}

async fn list_jobs(State(state): State<AppState>) -> Json<Vec<JobRecord>> {
    Json(state.jobs().list())
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobRecord>, ApiError> {
    state.jobs().get(&id).map(Json).ok_or_else(|| ApiError::not_found(format!("job `{id}` not found")))
}

async fn generate(State(state): State<AppState>, JsonBody(req): JsonBody<GenerateRequest>) -> Result<Accepted, ApiError> {
    let mut cfg = state.config().clone();
    if let Some(s) = req.seed {
        cfg.synth.seed = s;
    }
    if let Some(n) = req.n_patients {
        cfg.synth.n_patients = n;
    }
    submit(&state, Task::Generate, cfg)
}

async fn build_cohort(State(state): State<AppState>, JsonBody(_): JsonBody<EmptyRequest>) -> Result<Accepted, ApiError> {
    submit(&state, Task::Cohort, state.config().clone())
}

async fn train(State(state): State<AppState>, JsonBody(req): JsonBody<TrainRequest>) -> Result<Accepted, ApiError> {
    let mut cfg = state.config().clone();
    if let Some(s) = req.seed {
        cfg.model.seed = s;
    }
    submit(&state, Task::Train(req.kind.into()), cfg)
}

async fn explain(State(state): State<AppState>, JsonBody(req): JsonBody<ExplainRequest>) -> Result<Accepted, ApiError> {
    let mut cfg = state.config().clone();
    if let Some(s) = req.seed {
        cfg.explain.seed = s;
    }
    let kind = req.kind.map_or(cfg.active_model, ModelKind::from);
    submit(&state, Task::Explain(kind), cfg)
}

async fn ingest(State(state): State<AppState>, JsonBody(_): JsonBody<EmptyRequest>) -> Result<Accepted, ApiError> {
    submit(&state, Task::Ingest, state.config().clone())
}

async fn cohort(State(state): State<AppState>) -> Result<Json<CohortReport>, ApiError> {
    Ok(Json(state.loaded()?.require_cohort()?.clone()))
}

async fn metrics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<MetricsReport>, ApiError> {
    let kind: ModelKind = id.parse().map_err(|_| ApiError::not_found(format!("model `{id}` not found")))?;
    Ok(Json(state.loaded()?.require_metrics(kind)?.test.clone()))
}

async fn guidelines(State(state): State<AppState>) -> Result<Json<GuidelineDoc>, ApiError> {
    let l = state.loaded()?;
    l.require_index()?;
    Ok(Json(l.guidelines.clone().expect("index implies guidelines")))
}

async fn prototypes(
    State(state): State<AppState>,
    q: Result<Query<KQuery>, QueryRejection>,
) -> Result<Json<PrototypesResponse>, ApiError> {
    let k = query(q)?.k.unwrap_or(state.config().explain.k);
    let l = state.loaded()?;
    let e = l.require_explanations()?;
    Ok(Json(PrototypesResponse {
        snapshot: l.snapshot.id.clone(),
        model_kind: e.model_kind.to_string(),
        k,
        pool_size: e.pool.len(),
        prototypes: l.prototypes(k)?,
    }))
}

async fn prototype_summary(State(state): State<AppState>) -> Result<Json<PrototypeSummary>, ApiError> {
    Ok(Json(state.loaded()?.require_explanations()?.summary.clone()))
}

async fn risk(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<RiskResponse>, ApiError> {
    let l = state.loaded()?;
    let kind = l.explained_model();
    let risk = l.risk(&id, kind)?;
    Ok(Json(RiskResponse { snapshot: l.snapshot.id.clone(), patient_id: id, model_kind: kind.to_string(), risk }))
}

async fn explanation(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Attribution>, ApiError> {
    let l = state.loaded()?;
    let result = tokio::task::spawn_blocking(move || l.explanation(&id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(Json(result?))
}

async fn aggregate(
    State(state): State<AppState>,
    q: Result<Query<TopQuery>, QueryRejection>,
) -> Result<Json<AggregateResponse>, ApiError> {
    let top = query(q)?.top.unwrap_or(state.config().explain.top_n);
    let l = state.loaded()?;
    Ok(Json(AggregateResponse {
        snapshot: l.snapshot.id.clone(),
        model_kind: l.require_explanations()?.model_kind.to_string(),
        items: l.aggregate(top)?,
    }))
}

async fn ask(State(state): State<AppState>, JsonBody(req): JsonBody<AskRequest>) -> Result<Json<QaResponse>, ApiError> {
    if req.question.trim().is_empty() {
        return Err(ckdctx_core::qa::QaError::EmptyQuery.into());
    }
    let l = state.loaded()?;
    if let Some(p) = &req.patient_id {
        if l.require_features()?.row_of(p).is_none() {
            return Err(ApiError::not_found(format!("patient `{p}` not found")));
        }
    }
    let k = req.k.unwrap_or(state.config().qa.default_k);
    let answers = l.ask(&req.question, k)?;
    Ok(Json(QaResponse { snapshot: l.snapshot.id.clone(), question: req.question, patient_id: req.patient_id, answers }))
}

async fn context_answer(
    State(state): State<AppState>,
    JsonBody(req): JsonBody<ContextRequest>,
) -> Result<Json<AnswerBundle>, ApiError> {
    let kind = QuestionKind::parse(&req.kind)
        .ok_or_else(|| ApiError::bad_request("kind", format!("unknown question kind `{}`", req.kind)))?;
    let routed = if kind == QuestionKind::FreeText {
        let text = req.question.clone().filter(|q| !q.trim().is_empty());
        let text = text.ok_or_else(|| ApiError::bad_request("question", "FreeText needs a question"))?;
        Routed { kind, annotation: kind.annotation(), text: Some(text) }
    } else {
        route(kind.code())
    };
    let l = state.loaded()?;
    let bundle = l.answer(state.config(), state.inputs(), &routed, req.patient_id.as_deref())?;
    Ok(Json(bundle))
}
