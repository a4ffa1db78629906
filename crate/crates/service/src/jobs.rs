//! In-process job queue. Workers are plain threads; with one worker jobs
//! run strictly in submission order.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

use axum::http::StatusCode;
use ckdctx_core::config::PipelineConfig;
use ckdctx_core::error::PipelineError;
use ckdctx_core::pipeline::{self, StageReport};
use ckdctx_core::risk::ModelKind;
use ckdctx_core::store::Store;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ErrorBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Generate,
    Cohort,
    Train,
    Explain,
    Ingest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    /// Model kind for train and explain jobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_kind: Option<String>,
    /// Snapshot and artifacts written, once done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    #[schemars(with = "Option<serde_json::Value>")]
    pub result: Option<StageReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

/// A job with its resolved configuration.
#[derive(Debug, Clone)]
pub enum Task {
    Generate,
    Cohort,
    Train(ModelKind),
    Explain(ModelKind),
    Ingest,
}

impl Task {
    fn kind(&self) -> JobKind {
        match self {
            Task::Generate => JobKind::Generate,
            Task::Cohort => JobKind::Cohort,
            Task::Train(_) => JobKind::Train,
            Task::Explain(_) => JobKind::Explain,
            Task::Ingest => JobKind::Ingest,
        }
    }

    fn model_kind(&self) -> Option<ModelKind> {
        match self {
            Task::Train(k) | Task::Explain(k) => Some(*k),
            _ => None,
        }
    }

    fn run(&self, store: &Store, cfg: &PipelineConfig) -> Result<StageReport, PipelineError> {
        match self {
            Task::Generate => pipeline::generate_data(store, cfg),
            Task::Cohort => pipeline::build_cohort(store, cfg),
            Task::Train(k) => pipeline::train(store, cfg, *k),
            Task::Explain(k) => pipeline::explain(store, cfg, *k),
            Task::Ingest => pipeline::ingest_guidelines(store, cfg),
        }
    }
}

#[derive(Default)]
struct Inner {
    records: BTreeMap<String, JobRecord>,
    queue: VecDeque<(String, Task, PipelineConfig)>,
    next: u64,
    paused: bool,
    shutdown: bool,
}

#[derive(Default)]
struct Shared {
    inner: Mutex<Inner>,
    changed: Condvar,
}

/// Handle on the queue; dropping the last one stops the workers.
pub struct Jobs {
    shared: Arc<Shared>,
}

impl Jobs {
    pub fn start(store: Arc<Store>, workers: usize, paused: bool) -> Self {
        let shared = Arc::new(Shared::default());
        shared.inner.lock().unwrap().paused = paused;
        for _ in 0..workers.max(1) {
            let shared = Arc::clone(&shared);
            let store = Arc::clone(&store);
            thread::spawn(move || worker(&shared, &store));
        }
        Self { shared }
    }

    /// Queues a task. A train job is refused while another is pending.
    pub fn submit(&self, task: Task, cfg: PipelineConfig) -> Result<JobRecord, ApiError> {
        let mut inner = self.shared.inner.lock().unwrap();
        if task.kind() == JobKind::Train {
            let busy = inner
                .records
                .values()
                .find(|r| r.kind == JobKind::Train && matches!(r.state, JobState::Queued | JobState::Running));
            if let Some(r) = busy {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "conflict",
                    format!("train job {} is still {:?}", r.job_id, r.state).to_lowercase(),
                ));
            }
        }
        inner.next += 1;
        let job_id = format!("job-{:06}", inner.next);
        let record = JobRecord {
            job_id: job_id.clone(),
            kind: task.kind(),
            state: JobState::Queued,
            model_kind: task.model_kind().map(|k| k.to_string()),
            result: None,
            error: None,
        };
        inner.records.insert(job_id.clone(), record.clone());
        inner.queue.push_back((job_id, task, cfg));
        self.shared.changed.notify_all();
        Ok(record)
    }

    pub fn get(&self, job_id: &str) -> Option<JobRecord> {
        self.shared.inner.lock().unwrap().records.get(job_id).cloned()
    }

    pub fn list(&self) -> Vec<JobRecord> {
        self.shared.inner.lock().unwrap().records.values().cloned().collect()
    }

    pub fn resume(&self) {
        self.shared.inner.lock().unwrap().paused = false;
        self.shared.changed.notify_all();
    }

    /// Blocks until the job has finished.
    pub fn wait(&self, job_id: &str) -> Option<JobRecord> {
        let mut inner = self.shared.inner.lock().unwrap();
        loop {
            let r = inner.records.get(job_id)?;
            if matches!(r.state, JobState::Done | JobState::Failed) {
                return Some(r.clone());
            }
            inner = self.shared.changed.wait(inner).unwrap();
        }
    }
}

impl Drop for Jobs {
    fn drop(&mut self) {
        self.shared.inner.lock().unwrap().shutdown = true;
        self.shared.changed.notify_all();
    }
}

fn worker(shared: &Shared, store: &Store) {
    loop {
        let (job_id, task, cfg) = {
            let mut inner = shared.inner.lock().unwrap();
            loop {
                if inner.shutdown {
                    return;
                }
                if !inner.paused {
                    if let Some(next) = inner.queue.pop_front() {
                        break next;
                    }
                }
                inner = shared.changed.wait(inner).unwrap();
            }
        };
        set_state(shared, &job_id, |r| r.state = JobState::Running);
        log::info!("{job_id} running");
        let outcome = task.run(store, &cfg);
        set_state(shared, &job_id, |r| match outcome {
            Ok(report) => {
                r.state = JobState::Done;
                r.result = Some(report);
            }
            Err(e) => {
                log::warn!("{job_id} failed: {e}");
                r.state = JobState::Failed;
                r.error = Some(ApiError::from(e).body);
            }
        });
    }
}

fn set_state(shared: &Shared, job_id: &str, f: impl FnOnce(&mut JobRecord)) {
    let mut inner = shared.inner.lock().unwrap();
    if let Some(r) = inner.records.get_mut(job_id) {
        f(r);
    }
    shared.changed.notify_all();
}
