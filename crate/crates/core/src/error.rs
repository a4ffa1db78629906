use std::path::Path;

use thiserror::Error;

use crate::cohort::CohortError;
use crate::context::ContextError;
use crate::explain::ExplainError;
use crate::guideline::GuidelineError;
use crate::qa::QaError;
use crate::risk::ModelError;

/// Errors surfaced by pipeline stages and the artifact store.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    /// A stage needs an artifact no earlier job has produced.
    #[error("artifact `{artifact}` is missing; run `{job}` first")]
    Missing { artifact: String, job: String },
    #[error("{what} `{id}` not found")]
    NotFound { what: &'static str, id: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt artifact `{artifact}`: {message}")]
    Corrupt { artifact: String, message: String },
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Guideline(#[from] GuidelineError),
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error(transparent)]
    Context(#[from] ContextError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.display().to_string(), source }
    }

    pub fn missing(artifact: &str, job: &str) -> Self {
        PipelineError::Missing { artifact: artifact.into(), job: job.into() }
    }
}
