//! Background execution of runs: a FIFO queue served by worker threads,
//! pollable state, cancellation, and on-disk persistence under
//! `<root>/runs/<run_id>/`.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::dataset::AnalysisDataset;
use crate::pipeline::{execute, ManifestError, ProgressSink, RunError, RunManifest, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Succeeded | RunStatus::Failed | RunStatus::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub stage: Option<Stage>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub status: RunStatus,
    pub stage: Option<Stage>,
    pub progress: f64,
    pub submitted_at: String,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    pub error: Option<RunFailure>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("run `{0}` not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Invalid(#[from] ManifestError),
    #[error("run failed at stage {stage}: {message}", stage = .stage.map_or("unknown", Stage::as_str))]
    RunFailed { stage: Option<Stage>, message: String },
    #[error("storage error: {0}")]
    Io(String),
}

fn io_err(e: impl std::fmt::Display) -> EngineError {
    EngineError::Io(e.to_string())
}

fn now() -> String {
    let t: DateTime<Utc> = Utc::now();
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Directory holding `runs/`.
    pub root: PathBuf,
    /// Runs executed concurrently.
    pub workers: usize,
    /// Threads available to one run; `None` uses the machine default.
    pub threads: Option<usize>,
}

impl EngineConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), workers: 1, threads: None }
    }
}

struct Slot {
    state: Mutex<RunState>,
    cancel: AtomicBool,
    job: Mutex<Option<(RunManifest, Arc<AnalysisDataset>)>>,
}

impl ProgressSink for Slot {
    fn stage(&self, stage: Stage) {
        let mut s = self.state.lock().unwrap();
        if !s.status.is_terminal() {
            s.stage = Some(stage);
        }
    }

    fn progress(&self, fraction: f64) {
        let mut s = self.state.lock().unwrap();
        if !s.status.is_terminal() && fraction > s.progress {
            s.progress = fraction.min(1.0);
        }
    }

    fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }
}

struct Inner {
    config: EngineConfig,
    runs: Mutex<HashMap<String, Arc<Slot>>>,
    queue: Mutex<VecDeque<String>>,
    ready: Condvar,
    shutdown: AtomicBool,
}

impl Inner {
    fn run_dir(&self, id: &str) -> PathBuf {
        self.config.root.join("runs").join(id)
    }

    fn write(&self, id: &str, file: &str, contents: &str) -> Result<(), EngineError> {
        let dir = self.run_dir(id);
        fs::create_dir_all(&dir).map_err(io_err)?;
        let tmp = dir.join(format!(".{file}.tmp"));
        fs::write(&tmp, contents).map_err(io_err)?;
        fs::rename(&tmp, dir.join(file)).map_err(io_err)
    }

    fn persist_state(&self, state: &RunState) {
        match canonical::to_file_string(state) {
            Ok(text) => {
                if let Err(e) = self.write(&state.run_id, "state.json", &text) {
                    log::error!("persisting state of {}: {e}", state.run_id);
                }
            }
            Err(e) => log::error!("serializing state of {}: {e}", state.run_id),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, EngineError> {
        self.runs.lock().unwrap().get(id).cloned().ok_or_else(|| EngineError::NotFound(id.to_string()))
    }

    fn next_job(&self) -> Option<String> {
        let mut q = self.queue.lock().unwrap();
        loop {
            if self.shutdown.load(Ordering::SeqCst) {
                return None;
            }
            if let Some(id) = q.pop_front() {
                return Some(id);
            }
            q = self.ready.wait(q).unwrap();
        }
    }

    fn work(&self, id: &str) {
        let Ok(slot) = self.slot(id) else { return };
        let Some((manifest, dataset)) = slot.job.lock().unwrap().take() else { return };
        {
            let mut s = slot.state.lock().unwrap();
            if s.status != RunStatus::Queued {
                return;
            }
            s.status = RunStatus::Running;
            s.started_at = Some(now());
            self.persist_state(&s);
        }
        log::info!("run {id} started");
        let outcome = match self.pool() {
            Ok(pool) => pool.install(|| execute(&dataset, &manifest, slot.as_ref())),
            Err(e) => Err(RunError::Failed { stage: Stage::IngestingCharacteristics, message: e }),
        };
        let results = outcome.and_then(|r| {
            canonical::to_file_string(&r).map_err(|e| RunError::Failed {
                stage: Stage::Diagnostics,
                message: format!("serializing results: {e}"),
            })
        });

        let mut s = slot.state.lock().unwrap();
        if s.status.is_terminal() {
            // cancelled while running; results are discarded
            return;
        }
        match results {
            Ok(text) => match self.write(id, "results.json", &text) {
                Ok(()) => {
                    s.status = RunStatus::Succeeded;
                    s.progress = 1.0;
                }
                Err(e) => {
                    s.status = RunStatus::Failed;
                    s.error = Some(RunFailure { stage: s.stage, message: e.to_string() });
                }
            },
            Err(RunError::Cancelled) => s.status = RunStatus::Cancelled,
            Err(RunError::Failed { stage, message }) => {
                s.status = RunStatus::Failed;
                s.stage = Some(stage);
                s.error = Some(RunFailure { stage: Some(stage), message });
            }
        }
        s.finished_at = Some(now());
        self.persist_state(&s);
        log::info!("run {id} finished: {:?}", s.status);
    }

    fn pool(&self) -> Result<rayon::ThreadPool, String> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.config.threads {
            b = b.num_threads(n.max(1));
        }
        b.build().map_err(|e| e.to_string())
    }
}

/// Thread-safe handle to the run queue. Clones share the same engine.
#[derive(Clone)]
pub struct RunEngine {
    inner: Arc<Inner>,
}

impl RunEngine {
    /// Opens (or creates) the store at `config.root`, reloads persisted runs
    /// and starts the workers. Runs left queued or running by a previous
    /// process are marked failed, since their inputs are not persisted.
    pub fn start(config: EngineConfig) -> Result<Self, EngineError> {
        fs::create_dir_all(config.root.join("runs")).map_err(io_err)?;
        let inner = Arc::new(Inner {
            runs: Mutex::new(HashMap::new()),
            queue: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            shutdown: AtomicBool::new(false),
            config,
        });
        inner.runs.lock().unwrap().extend(Self::reload(&inner)?);
        for i in 0..inner.config.workers.max(1) {
            let inner = Arc::clone(&inner);
            thread::Builder::new()
                .name(format!("psmw-worker-{i}"))
                .spawn(move || {
                    while let Some(id) = inner.next_job() {
                        inner.work(&id);
                    }
                })
                .map_err(io_err)?;
        }
        Ok(Self { inner })
    }

    fn reload(inner: &Inner) -> Result<HashMap<String, Arc<Slot>>, EngineError> {
        let mut out = HashMap::new();
        for entry in fs::read_dir(inner.config.root.join("runs")).map_err(io_err)? {
            let path = entry.map_err(io_err)?.path();
            let Ok(text) = fs::read_to_string(path.join("state.json")) else { continue };
            let Ok(mut state) = serde_json::from_str::<RunState>(&text) else {
                log::warn!("skipping unreadable run state in {}", path.display());
                continue;
            };
            if !state.status.is_terminal() {
                state.status = RunStatus::Failed;
                state.error = Some(RunFailure { stage: state.stage, message: "interrupted by restart".into() });
                state.finished_at = Some(now());
                inner.persist_state(&state);
            }
            let id = state.run_id.clone();
            out.insert(
                id,
                Arc::new(Slot { state: Mutex::new(state), cancel: AtomicBool::new(false), job: Mutex::new(None) }),
            );
        }
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.inner.config.root
    }

    /// Validates and queues a run. Every call creates a new run.
    pub fn submit(&self, manifest: RunManifest, dataset: Arc<AnalysisDataset>) -> Result<String, EngineError> {
        manifest.validate(&dataset)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let state = RunState {
            run_id: id.clone(),
            status: RunStatus::Queued,
            stage: None,
            progress: 0.0,
            submitted_at: now(),
            started_at: None,
            finished_at: None,
            error: None,
        };
        self.inner.write(&id, "manifest.json", &canonical::to_file_string(&manifest).map_err(io_err)?)?;
        self.inner.persist_state(&state);
        let slot = Slot {
            state: Mutex::new(state),
            cancel: AtomicBool::new(false),
            job: Mutex::new(Some((manifest, dataset))),
        };
        self.inner.runs.lock().unwrap().insert(id.clone(), Arc::new(slot));
        self.inner.queue.lock().unwrap().push_back(id.clone());
        self.inner.ready.notify_one();
        Ok(id)
    }

    pub fn poll(&self, id: &str) -> Result<RunState, EngineError> {
        Ok(self.inner.slot(id)?.state.lock().unwrap().clone())
    }

    /// Persisted results bytes of a succeeded run.
    pub fn fetch_results(&self, id: &str) -> Result<String, EngineError> {
        let state = self.poll(id)?;
        match state.status {
            RunStatus::Succeeded => fs::read_to_string(self.inner.run_dir(id).join("results.json")).map_err(io_err),
            RunStatus::Failed => {
                let e = state.error.unwrap_or(RunFailure { stage: state.stage, message: "unknown error".into() });
                Err(EngineError::RunFailed { stage: e.stage, message: e.message })
            }
            RunStatus::Cancelled => Err(EngineError::Conflict(format!("run `{id}` was cancelled"))),
            _ => Err(EngineError::Conflict(format!("run `{id}` has not finished"))),
        }
    }

    /// Requests cancellation. The run is marked cancelled at once; its worker
    /// stops at the next stage or replicate boundary.
    pub fn cancel(&self, id: &str) -> Result<RunState, EngineError> {
        let slot = self.inner.slot(id)?;
        let mut s = slot.state.lock().unwrap();
        if s.status.is_terminal() {
            return Err(EngineError::Conflict(format!("run `{id}` is already {:?}", s.status).to_lowercase()));
        }
        slot.cancel.store(true, Ordering::SeqCst);
        slot.job.lock().unwrap().take();
        s.status = RunStatus::Cancelled;
        s.finished_at = Some(now());
        self.inner.persist_state(&s);
        Ok(s.clone())
    }

    /// States of every known run, oldest first.
    pub fn list(&self) -> Vec<RunState> {
        let mut all: Vec<RunState> =
            self.inner.runs.lock().unwrap().values().map(|s| s.state.lock().unwrap().clone()).collect();
        all.sort_by(|a, b| a.submitted_at.cmp(&b.submitted_at).then_with(|| a.run_id.cmp(&b.run_id)));
        all
    }

    /// Stops the workers after their current run.
    pub fn shutdown(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        self.inner.ready.notify_all();
    }
}
