use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ckdctx_core::context::ContextError;
use ckdctx_core::error::PipelineError;
use ckdctx_core::qa::QaError;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

/// Uniform error body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    /// Offending request field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Job that would produce a missing artifact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into(), path: None, job: None } }
    }

    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.body.path = Some(path.into());
        self
    }

    pub fn bad_request(path: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message).with_path(path)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn missing(message: String, job: &str) -> Self {
        let mut e = Self::new(StatusCode::CONFLICT, "missing_artifact", message);
        e.body.job = Some(job.into());
        e
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::Config { path, .. } => Self::bad_request(&path, message),
            PipelineError::Missing { job, .. } => Self::missing(message, &job),
            PipelineError::NotFound { .. } => Self::not_found(message),
            PipelineError::Qa(q) => q.into(),
            PipelineError::Context(c) => c.into(),
            PipelineError::Io { .. } | PipelineError::Corrupt { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", message)
            }
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "domain_error", message),
        }
    }
}

impl From<QaError> for ApiError {
    fn from(e: QaError) -> Self {
        let message = e.to_string();
        match e {
            QaError::EmptyQuery => Self::new(StatusCode::BAD_REQUEST, "empty_query", message).with_path("question"),
            QaError::EmptyStore => Self::missing(message, ckdctx_core::pipeline::job::INGEST),
            QaError::Config(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "config_error", message),
        }
    }
}

impl From<ContextError> for ApiError {
    fn from(e: ContextError) -> Self {
        let message = e.to_string();
        match e {
            ContextError::PatientRequired(_) => Self::bad_request("patient_id", message),
            ContextError::UnknownPatient(_) => Self::not_found(message),
            ContextError::UnknownKind(_) => Self::bad_request("kind", message),
            ContextError::Dependency { job, .. } => Self::missing(message, job),
            ContextError::Qa(q) => q.into(),
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "domain_error", message),
        }
    }
}
