//! HTTP API over the pipeline, versioned under `/v1`.
//!
//! Mutations are jobs executed by an in-process queue; reads are served
//! from the snapshot that is current when the request arrives.

mod api;
mod error;
mod jobs;
mod openapi;

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::{Request, State};
use axum::http::header::AUTHORIZATION;
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::Router;
use ckdctx_core::config::PipelineConfig;
use ckdctx_core::error::PipelineError;
use ckdctx_core::pipeline::{ContextInputs, Loaded};
use ckdctx_core::store::Store;

pub use api::{
    AggregateResponse, AskRequest, ContextRequest, ExplainRequest, GenerateRequest, KindParam, PrototypesResponse,
    QaResponse, RiskResponse, SnapshotInfo, TrainRequest,
};
pub use error::{ApiError, ErrorBody};
pub use jobs::{JobKind, JobRecord, JobState, Jobs, Task};
pub use openapi::openapi;

struct Shared {
    cfg: PipelineConfig,
    inputs: ContextInputs,
    store: Arc<Store>,
    jobs: Jobs,
    cache: RwLock<Option<Arc<Loaded>>>,
}

/// Service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Opens the data directory named by `cfg.service` and starts the
    /// job workers.
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        Self::build(cfg, false)
    }

    /// As [`AppState::new`], with queued jobs held until [`AppState::jobs`]
    /// is resumed.
    pub fn paused(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        Self::build(cfg, true)
    }

    fn build(cfg: PipelineConfig, paused: bool) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let store = Arc::new(Store::open(&cfg.service.data_dir)?);
        let inputs = ContextInputs::load(&cfg)?;
        let jobs = Jobs::start(Arc::clone(&store), cfg.service.workers, paused);
        Ok(Self(Arc::new(Shared { cfg, inputs, store, jobs, cache: RwLock::new(None) })))
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.0.cfg
    }

    pub fn jobs(&self) -> &Jobs {
        &self.0.jobs
    }

    pub fn store(&self) -> &Store {
        &self.0.store
    }

    fn inputs(&self) -> &ContextInputs {
        &self.0.inputs
    }

    /// The decoded current snapshot, reloaded when `CURRENT` moves.
    fn loaded(&self) -> Result<Arc<Loaded>, ApiError> {
        let id = self.0.store.current_id()?.unwrap_or_default();
        if let Some(l) = self.0.cache.read().unwrap().as_ref() {
            if l.snapshot.id == id {
                return Ok(Arc::clone(l));
            }
        }
        let snapshot = if id.is_empty() { self.0.store.current()? } else { self.0.store.snapshot(&id)? };
        let loaded = Arc::new(Loaded::load(snapshot, &self.0.cfg)?);
        *self.0.cache.write().unwrap() = Some(Arc::clone(&loaded));
        Ok(loaded)
    }
}

async fn bearer_auth(State(state): State<AppState>, req: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(token) = &state.0.cfg.service.bearer_token {
        let ok = req
            .headers()
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return Err(ApiError::new(axum::http::StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token"));
        }
    }
    Ok(next.run(req).await)
}

/// The full application: `/v1` API plus static `/ui` when configured.
pub fn router(state: AppState) -> Router {
    let v1 = api::routes().layer(middleware::from_fn_with_state(state.clone(), bearer_auth));
    let mut app = Router::new().nest("/v1", v1);
    if let Some(dir) = &state.0.cfg.service.ui_dir {
        app = app.nest_service("/ui", tower_http::services::ServeDir::new(dir));
    }
    app.fallback(|| async { ApiError::not_found("no such route") }).with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Blocking entry point: builds a runtime and serves on `cfg.service.port`.
pub fn run(cfg: PipelineConfig) -> Result<(), Box<dyn std::error::Error>> {
    let addr = SocketAddr::from(([0, 0, 0, 0], cfg.service.port));
    let state = AppState::new(cfg)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(state, addr))?;
    Ok(())
}

