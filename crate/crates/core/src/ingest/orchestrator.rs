use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::docs::{chunk_documents, DocsRequest};
use super::manager::EngineManager;
use super::manifest::{write_atomic, JobKind, JobManifest, JobState, JobStore, StageMetric};
use super::offload::{offload_execute, OffloadSettings, RemoteExecutor, SimulatedExecutor, Workload};
use super::source::{JsonlSource, SyntheticSource, TicketSource};
use super::watermark::WatermarkFile;
use super::IngestError;
use crate::corpus::{self, ChunkRecord, CorpusSchema, Departments, RawMessage};
use crate::normalize::{prepare_tickets, ChunkingPolicy, Normalizer, NormalizerConfig};
use crate::synth::SynthSpec;

pub const RT_WEEKLY_STAGES: [&str; 8] = [
    "fetch",
    "prepare",
    "consolidate",
    "merge",
    "catalog",
    "append",
    "reload",
    "watermark",
];
pub const DOCS_STAGES: [&str; 6] = ["prepare", "consolidate", "merge", "catalog", "append", "reload"];

/// Checked inside the append stage, after the staging copy is written and
/// before it is re-validated.
pub const STAGING_FAULT: &str = "append.staging";

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    /// Holds `jobs/`, `data/` and `state/`.
    pub root: PathBuf,
    pub departments: Departments,
    pub chunking: ChunkingPolicy,
    pub normalizer: NormalizerConfig,
    pub watermark_overlap: chrono::Duration,
    pub offload: OffloadSettings,
}

impl OrchestratorConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            departments: Departments::default(),
            chunking: ChunkingPolicy::default(),
            normalizer: NormalizerConfig::default(),
            watermark_overlap: chrono::Duration::hours(48),
            offload: OffloadSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtWeeklyRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthSpec>,
    /// End of the extraction window; defaults to the submission time.
    #[serde(default, with = "crate::corpus::timestamp_opt", skip_serializing_if = "Option::is_none")]
    pub now: Option<DateTime<Utc>>,
}

/// One entry of the source catalogue (`data/catalog.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub kind: JobKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub department: Option<String>,
    pub chunks: usize,
    pub job_id: String,
    #[serde(with = "crate::corpus::timestamp")]
    pub updated_at: DateTime<Utc>,
}

/// When a job held the mutation lock.
#[derive(Debug, Clone)]
pub struct LockSpan {
    pub job_id: String,
    pub entered: Instant,
    pub left: Instant,
}

/// Test hook: fails or delays named stages.
#[derive(Debug, Default)]
pub struct FaultInjector {
    failures: Mutex<HashMap<String, usize>>,
    delays: Mutex<HashMap<String, Duration>>,
}

impl FaultInjector {
    /// The next time `stage` starts it fails.
    pub fn arm(&self, stage: &str) {
        *self.failures.lock().entry(stage.to_string()).or_default() += 1;
    }

    pub fn delay(&self, stage: &str, d: Duration) {
        self.delays.lock().insert(stage.to_string(), d);
    }

    pub fn clear(&self) {
        self.failures.lock().clear();
        self.delays.lock().clear();
    }

    pub fn check(&self, stage: &str) -> Result<(), IngestError> {
        let delay = self.delays.lock().get(stage).copied();
        if let Some(d) = delay {
            std::thread::sleep(d);
        }
        let mut failures = self.failures.lock();
        if let Some(n) = failures.get_mut(stage) {
            if *n > 0 {
                *n -= 1;
                return Err(IngestError::Injected(stage.to_string()));
            }
        }
        Ok(())
    }
}

enum JobRequest {
    RtWeekly(RtWeeklyRequest),
    Docs(JobKind, DocsRequest),
}

/// Turns serde messages such as "unknown field `x`" into a field name.
fn serde_field(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .filter(|_| message.contains("field"))
        .unwrap_or("request")
        .to_string()
}

struct JobRun<'a> {
    jobs: &'a JobStore,
    manifest: JobManifest,
    total: usize,
}

impl JobRun<'_> {
    fn save(&mut self) -> Result<(), IngestError> {
        self.manifest.updated_at = corpus::now_seconds();
        self.jobs.save(&self.manifest)
    }

    fn log(&self, line: &str) {
        self.jobs.log(&self.manifest.job_id, line);
    }

    fn begin(&mut self, stage: &str, faults: &FaultInjector) -> Result<(DateTime<Utc>, Instant), IngestError> {
        self.manifest.current_stage = stage.to_string();
        self.save()?;
        self.log(&format!("stage {stage} started"));
        faults.check(stage)?;
        Ok((corpus::now_seconds(), Instant::now()))
    }

    fn end(&mut self, stage: &str, started: (DateTime<Utc>, Instant), counts: BTreeMap<String, u64>) -> Result<(), IngestError> {
        let duration_ms = started.1.elapsed().as_secs_f64() * 1e3;
        self.log(&format!("stage {stage} finished in {duration_ms:.1} ms {counts:?}"));
        self.manifest.stages.push(StageMetric {
            stage: stage.to_string(),
            started_at: started.0,
            duration_ms,
            counts,
        });
        self.manifest.progress = (self.manifest.stages.len() as f64 / self.total as f64).min(1.0);
        self.save()
    }

    /// Runs one stage, recording its metrics; errors carry the stage name.
    fn stage<T>(
        &mut self,
        name: &str,
        faults: &FaultInjector,
        f: impl FnOnce(&mut BTreeMap<String, u64>) -> Result<T, IngestError>,
    ) -> Result<T, (String, IngestError)> {
        let fail = |e| (name.to_string(), e);
        let started = self.begin(name, faults).map_err(fail)?;
        let mut counts = BTreeMap::new();
        let out = f(&mut counts).map_err(fail)?;
        self.end(name, started, counts).map_err(fail)?;
        Ok(out)
    }
}

/// Accepts jobs, runs them one at a time on a background worker and
/// serializes every mutation of the dataset, the index and the engine.
pub struct Orchestrator {
    config: OrchestratorConfig,
    normalizer: Normalizer,
    jobs: JobStore,
    manager: Arc<EngineManager>,
    mutation_lock: Mutex<()>,
    lock_trace: Mutex<Vec<LockSpan>>,
    faults: FaultInjector,
    executor: Arc<dyn RemoteExecutor>,
    queue: Mutex<Option<mpsc::Sender<(String, JobRequest)>>>,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("root", &self.config.root)
            .finish_non_exhaustive()
    }
}

struct MutationGuard<'a> {
    trace: &'a Mutex<Vec<LockSpan>>,
    job_id: String,
    entered: Instant,
    _lock: parking_lot::MutexGuard<'a, ()>,
}

impl Drop for MutationGuard<'_> {
    fn drop(&mut self) {
        self.trace.lock().push(LockSpan {
            job_id: std::mem::take(&mut self.job_id),
            entered: self.entered,
            left: Instant::now(),
        });
    }
}

impl Orchestrator {
    /// Builds the orchestrator and starts its background worker.
    pub fn start(config: OrchestratorConfig, manager: Arc<EngineManager>) -> Result<Arc<Self>, IngestError> {
        let delay = Duration::from_millis(config.offload.queue_delay_ms);
        Self::start_with_executor(config, manager, Arc::new(SimulatedExecutor::new(delay)))
    }

    pub fn start_with_executor(
        config: OrchestratorConfig,
        manager: Arc<EngineManager>,
        executor: Arc<dyn RemoteExecutor>,
    ) -> Result<Arc<Self>, IngestError> {
        config.chunking.validate().map_err(|e| IngestError::Validation {
            field: "chunking".into(),
            message: e.to_string(),
        })?;
        let normalizer = Normalizer::new(&config.normalizer).map_err(|e| IngestError::Validation {
            field: "normalizer".into(),
            message: e.to_string(),
        })?;
        let (tx, rx) = mpsc::channel::<(String, JobRequest)>();
        let this = Arc::new(Self {
            jobs: JobStore::new(config.root.join("jobs")),
            config,
            normalizer,
            manager,
            mutation_lock: Mutex::new(()),
            lock_trace: Mutex::new(Vec::new()),
            faults: FaultInjector::default(),
            executor,
            queue: Mutex::new(Some(tx)),
        });
        let weak: Weak<Self> = Arc::downgrade(&this);
        std::thread::Builder::new()
            .name("ingest-worker".into())
            .spawn(move || {
                while let Ok((job_id, request)) = rx.recv() {
                    let Some(this) = weak.upgrade() else { break };
                    let _ = this.execute(&job_id, request, None);
                }
            })
            .map_err(|e| IngestError::io("ingest-worker", e))?;
        Ok(this)
    }

    pub fn manager(&self) -> &Arc<EngineManager> {
        &self.manager
    }

    pub fn jobs(&self) -> &JobStore {
        &self.jobs
    }

    pub fn faults(&self) -> &FaultInjector {
        &self.faults
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn watermark(&self) -> WatermarkFile {
        WatermarkFile::new(self.config.root.join("state").join("watermark.json"))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.config.root.join("data").join("dataset.jsonl")
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.config.root.join("data").join("catalog.json")
    }

    pub fn lock_trace(&self) -> Vec<LockSpan> {
        self.lock_trace.lock().clone()
    }

    /// Stops accepting jobs; the worker exits once the queue drains.
    pub fn close(&self) {
        self.queue.lock().take();
    }

    fn validate(&self, kind: JobKind, request: serde_json::Value) -> Result<(JobRequest, serde_json::Value), IngestError> {
        let bad = |e: serde_json::Error| {
            let message = e.to_string();
            IngestError::Validation {
                field: serde_field(&message),
                message,
            }
        };
        let now = Utc::now();
        match kind {
            JobKind::RtWeekly => {
                let mut req: RtWeeklyRequest = serde_json::from_value(request).map_err(bad)?;
                match (&req.source_path, &req.synthetic) {
                    (Some(_), Some(_)) | (None, None) => {
                        return Err(IngestError::Validation {
                            field: "source_path".into(),
                            message: "exactly one of source_path or synthetic is required".into(),
                        })
                    }
                    (Some(path), None) if !path.is_file() => {
                        return Err(IngestError::Validation {
                            field: "source_path".into(),
                            message: format!("{} is not a readable file", path.display()),
                        })
                    }
                    (None, Some(spec)) => {
                        if let Some(d) = spec.departments.iter().find(|d| !self.config.departments.contains(d)) {
                            return Err(IngestError::Validation {
                                field: "synthetic.departments".into(),
                                message: format!("unknown department {d:?}"),
                            });
                        }
                        if spec.window_start > spec.window_end {
                            return Err(IngestError::Validation {
                                field: "synthetic.window_start".into(),
                                message: "window_start is after window_end".into(),
                            });
                        }
                    }
                    _ => {}
                }
                let end = req.now.unwrap_or(now);
                if end > now {
                    return Err(IngestError::Validation {
                        field: "now".into(),
                        message: "window end is in the future".into(),
                    });
                }
                if let Some(wm) = self.watermark().read()? {
                    if end < wm {
                        return Err(IngestError::Validation {
                            field: "now".into(),
                            message: "window end precedes the current watermark".into(),
                        });
                    }
                }
                req.now = Some(chrono::Timelike::with_nanosecond(&end, 0).unwrap_or(end));
                let value = serde_json::to_value(&req).expect("request serializes");
                Ok((JobRequest::RtWeekly(req), value))
            }
            JobKind::Web | JobKind::Pdf | JobKind::RepoDocs => {
                let req: DocsRequest = serde_json::from_value(request).map_err(bad)?;
                req.validate(&self.config.departments, now)?;
                let value = serde_json::to_value(&req).expect("request serializes");
                Ok((JobRequest::Docs(kind, req), value))
            }
        }
    }

    fn create(&self, kind: JobKind, request: serde_json::Value) -> Result<(String, JobRequest), IngestError> {
        let (typed, validated) = self.validate(kind, request)?;
        let job_id = format!("{}-{}", kind.as_str().replace('_', "-"), uuid::Uuid::new_v4().simple());
        let manifest = JobManifest::new(job_id.clone(), kind, validated);
        self.jobs.save(&manifest)?;
        self.jobs.log(&job_id, &format!("queued {} job", kind.as_str()));
        Ok((job_id, typed))
    }

    /// Validates and enqueues a job; returns immediately with its id. Invalid
    /// requests create no manifest.
    pub fn submit_job(&self, kind: JobKind, request: serde_json::Value) -> Result<String, IngestError> {
        let (job_id, typed) = self.create(kind, request)?;
        let queue = self.queue.lock();
        let sender = queue.as_ref().ok_or(IngestError::QueueClosed)?;
        sender.send((job_id.clone(), typed)).map_err(|_| IngestError::QueueClosed)?;
        Ok(job_id)
    }

    /// Validates and runs a job on the calling thread.
    pub fn run_job(&self, kind: JobKind, request: serde_json::Value) -> Result<JobManifest, IngestError> {
        let (job_id, typed) = self.create(kind, request)?;
        self.execute(&job_id, typed, None)
    }

    /// Runs one weekly cycle ending at `now` against `source`.
    pub fn run_weekly_cycle(&self, now: DateTime<Utc>, source: &dyn TicketSource) -> Result<JobManifest, IngestError> {
        let req = RtWeeklyRequest {
            source_path: None,
            synthetic: None,
            now: Some(now),
        };
        let value = serde_json::json!({ "now": corpus::format_timestamp(&now), "source": "in-process" });
        let job_id = format!("rt-weekly-{}", uuid::Uuid::new_v4().simple());
        let manifest = JobManifest::new(job_id.clone(), JobKind::RtWeekly, value);
        self.jobs.save(&manifest)?;
        self.execute(&job_id, JobRequest::RtWeekly(req), Some(source))
    }

    /// Polls until the job reaches a terminal state or `timeout` passes.
    pub fn wait_for(&self, job_id: &str, timeout: Duration) -> Result<JobManifest, IngestError> {
        let deadline = Instant::now() + timeout;
        loop {
            let m = self.jobs.load(job_id)?;
            if m.state.is_terminal() || Instant::now() >= deadline {
                return Ok(m);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    fn execute(
        &self,
        job_id: &str,
        request: JobRequest,
        source: Option<&dyn TicketSource>,
    ) -> Result<JobManifest, IngestError> {
        let mut manifest = self.jobs.load(job_id)?;
        manifest.transition(JobState::Running)?;
        manifest.current_stage = "running".into();
        let total = match request {
            JobRequest::RtWeekly(_) => RT_WEEKLY_STAGES.len(),
            JobRequest::Docs(..) => DOCS_STAGES.len(),
        };
        let mut run = JobRun {
            jobs: &self.jobs,
            manifest,
            total,
        };
        run.save()?;
        run.log("running");
        let outcome = match request {
            JobRequest::RtWeekly(req) => self.rt_weekly(&mut run, &req, source),
            JobRequest::Docs(kind, req) => self.docs(&mut run, kind, &req),
        };
        match outcome {
            Ok(()) => {
                run.manifest.transition(JobState::Succeeded)?;
                run.manifest.current_stage = "done".into();
                run.manifest.progress = 1.0;
                run.save()?;
                run.log("succeeded");
                tracing::info!(job_id, generation = ?run.manifest.generation, "ingestion job succeeded");
            }
            Err((stage, e)) => {
                run.manifest.transition(JobState::Failed)?;
                run.manifest.failed_stage = Some(stage.clone());
                run.manifest.error = Some(e.to_string());
                run.save()?;
                run.log(&format!("failed at stage {stage}: {e}"));
                tracing::warn!(job_id, stage = %stage, error = %e, "ingestion job failed");
            }
        }
        Ok(run.manifest)
    }

    /// Runs `prepare` locally, or through the remote executor when offload is
    /// enabled, persisting the offload trail in the manifest.
    fn prepare(&self, run: &mut JobRun<'_>, workload: Workload<'_>) -> Result<Vec<ChunkRecord>, (String, IngestError)> {
        let stage = "prepare";
        let fail = |e| (stage.to_string(), e);
        let started = run.begin(stage, &self.faults).map_err(fail)?;
        let records = if self.config.offload.enabled {
            let job_id = run.manifest.job_id.clone();
            offload_execute(
                &job_id,
                self.executor.as_ref(),
                self.config.offload.release_policy,
                workload,
                &mut |state| {
                    run.manifest.offload = Some(state.clone());
                    run.save()
                },
            )
        } else {
            workload()
        }
        .map_err(fail)?;
        let counts = BTreeMap::from([("chunks".to_string(), records.len() as u64)]);
        run.end(stage, started, counts).map_err(fail)?;
        Ok(records)
    }

    /// Identity-unique, schema-valid delta.
    fn consolidate(&self, records: Vec<ChunkRecord>, not_after: DateTime<Utc>, counts: &mut BTreeMap<String, u64>) -> Result<Vec<ChunkRecord>, IngestError> {
        let schema = CorpusSchema {
            departments: self.config.departments.clone(),
            not_after,
        };
        let mut seen = HashSet::new();
        let mut delta = Vec::with_capacity(records.len());
        for r in records {
            schema.check_record(&r).map_err(|message| IngestError::Stage {
                stage: "consolidate".into(),
                message: format!("{}: {message}", r.key()),
            })?;
            if seen.insert(r.key()) {
                delta.push(r);
            }
        }
        corpus::validate_records(&delta, &schema)?;
        counts.insert("records".into(), delta.len() as u64);
        Ok(delta)
    }

    fn rt_weekly(
        &self,
        run: &mut JobRun<'_>,
        req: &RtWeeklyRequest,
        source: Option<&dyn TicketSource>,
    ) -> Result<(), (String, IngestError)> {
        let now = req.now.unwrap_or_else(Utc::now);
        let watermark = self.watermark();
        let owned: Box<dyn TicketSource>;
        let source: &dyn TicketSource = match (source, &req.source_path, &req.synthetic) {
            (Some(s), _, _) => s,
            (None, Some(path), _) => {
                owned = Box::new(JsonlSource { path: path.clone() });
                owned.as_ref()
            }
            (None, None, Some(spec)) => {
                owned = Box::new(SyntheticSource { spec: spec.clone() });
                owned.as_ref()
            }
            (None, None, None) => {
                return Err((
                    "fetch".into(),
                    IngestError::Validation {
                        field: "source_path".into(),
                        message: "no ticket source".into(),
                    },
                ))
            }
        };

        let messages = run.stage("fetch", &self.faults, |counts| {
            let from = match watermark.read()? {
                Some(wm) => wm - self.config.watermark_overlap,
                None => DateTime::<Utc>::UNIX_EPOCH,
            };
            let messages = source.fetch(from, now)?;
            counts.insert("messages".into(), messages.len() as u64);
            Ok(messages)
        })?;

        let job_id = run.manifest.job_id.clone();
        let normalizer = &self.normalizer;
        let policy = &self.config.chunking;
        let workload: Workload<'_> = Box::new(move || Ok(prepare_by_department(normalizer, &messages, policy, &job_id)));
        let records = self.prepare(run, workload)?;

        let delta = run.stage("consolidate", &self.faults, |counts| self.consolidate(records, now, counts))?;
        let catalog = vec![(
            "rt".to_string(),
            CatalogEntry {
                kind: JobKind::RtWeekly,
                title: None,
                department: None,
                chunks: delta.len(),
                job_id: run.manifest.job_id.clone(),
                updated_at: now,
            },
        )];
        self.run_mutation(run, &delta, catalog)?;

        run.stage("watermark", &self.faults, |_| watermark.advance(now))
    }

    fn docs(&self, run: &mut JobRun<'_>, kind: JobKind, req: &DocsRequest) -> Result<(), (String, IngestError)> {
        let now = Utc::now();
        let job_id = run.manifest.job_id.clone();
        let policy = &self.config.chunking;
        let records = &req.records;
        let workload: Workload<'_> = Box::new(move || Ok(chunk_documents(records, kind, policy, &job_id, now)));
        let chunks = self.prepare(run, workload)?;
        let delta = run.stage("consolidate", &self.faults, |counts| self.consolidate(chunks, now, counts))?;
        let mut per_doc: HashMap<&str, usize> = HashMap::new();
        for r in &delta {
            *per_doc.entry(r.ticket_id.as_str()).or_default() += 1;
        }
        let catalog = req
            .records
            .iter()
            .filter_map(|d| {
                let id = d.document_id()?;
                Some((
                    id.to_string(),
                    CatalogEntry {
                        kind,
                        title: Some(d.title.clone()),
                        department: Some(d.department.clone()),
                        chunks: per_doc.get(id).copied().unwrap_or(0),
                        job_id: run.manifest.job_id.clone(),
                        updated_at: now,
                    },
                ))
            })
            .collect();
        self.run_mutation(run, &delta, catalog)
    }

    /// Merge, catalogue update, index append and engine reload, all under the
    /// global mutation lock, which is released on every path.
    fn run_mutation(
        &self,
        run: &mut JobRun<'_>,
        delta: &[ChunkRecord],
        catalog: Vec<(String, CatalogEntry)>,
    ) -> Result<(), (String, IngestError)> {
        let _guard = MutationGuard {
            _lock: self.mutation_lock.lock(),
            trace: &self.lock_trace,
            job_id: run.manifest.job_id.clone(),
            entered: Instant::now(),
        };
        run.stage("merge", &self.faults, |counts| self.merge_dataset(delta, counts))?;
        run.stage("catalog", &self.faults, |counts| {
            counts.insert("entries".into(), catalog.len() as u64);
            self.update_catalog(catalog)
        })?;
        let embedder = self.manager.context().embedder.clone();
        run.stage("append", &self.faults, |counts| {
            let report = self.manager.store().append_delta_with_hook(delta, embedder.as_ref(), &mut |_| {
                self.faults
                    .check(STAGING_FAULT)
                    .map_err(|e| std::io::Error::other(e.to_string()))
            })?;
            counts.insert("accepted".into(), report.accepted as u64);
            counts.insert("duplicates".into(), report.duplicates as u64);
            counts.insert("records".into(), report.record_count as u64);
            Ok(())
        })?;
        let generation = run.stage("reload", &self.faults, |_| Ok(self.manager.reload()?))?;
        run.manifest.generation = Some(generation);
        run.save().map_err(|e| ("reload".to_string(), e))
    }

    /// Appends records with unseen identities to the merged dataset file.
    fn merge_dataset(&self, delta: &[ChunkRecord], counts: &mut BTreeMap<String, u64>) -> Result<(), IngestError> {
        let path = self.dataset_path();
        let mut existing: Vec<ChunkRecord> = match std::fs::read_to_string(&path) {
            Ok(text) => text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str(l).map_err(|e| IngestError::CorruptManifest {
                        path: path.clone(),
                        message: format!("line {}: {e}", i + 1),
                    })
                })
                .collect::<Result<_, _>>()?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(IngestError::io(&path, e)),
        };
        let mut known: HashSet<_> = existing.iter().map(ChunkRecord::key).collect();
        let before = existing.len();
        existing.extend(delta.iter().filter(|r| known.insert(r.key())).cloned());
        counts.insert("added".into(), (existing.len() - before) as u64);
        counts.insert("total".into(), existing.len() as u64);
        let mut bytes = Vec::new();
        corpus::write_jsonl(&existing, &mut bytes).map_err(|e| IngestError::io(&path, e))?;
        write_atomic(&path, &bytes)
    }

    fn update_catalog(&self, entries: Vec<(String, CatalogEntry)>) -> Result<(), IngestError> {
        let path = self.catalog_path();
        let mut catalog: BTreeMap<String, CatalogEntry> = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| IngestError::CorruptManifest {
                path: path.clone(),
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(IngestError::io(&path, e)),
        };
        for (key, mut entry) in entries {
            if let Some(old) = catalog.get(&key) {
                if entry.kind == JobKind::RtWeekly {
                    entry.chunks += old.chunks;
                }
            }
            catalog.insert(key, entry);
        }
        let bytes = serde_json::to_vec_pretty(&catalog).expect("catalog serializes");
        write_atomic(&path, &bytes)
    }

    pub fn catalog(&self) -> Result<BTreeMap<String, CatalogEntry>, IngestError> {
        match std::fs::read(self.catalog_path()) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| IngestError::CorruptManifest {
                path: self.catalog_path(),
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
            Err(e) => Err(IngestError::io(self.catalog_path(), e)),
        }
    }
}

/// Normalizes and chunks each department's tickets in parallel; the result
/// is concatenated in department order. A ticket belongs to the department
/// of its earliest message.
fn prepare_by_department(
    normalizer: &Normalizer,
    messages: &[RawMessage],
    policy: &ChunkingPolicy,
    job_id: &str,
) -> Vec<ChunkRecord> {
    let mut owner: HashMap<&str, (u32, &str)> = HashMap::new();
    for m in messages {
        let e = owner.entry(&m.ticket_id).or_insert((m.position, &m.department));
        if m.position < e.0 {
            *e = (m.position, &m.department);
        }
    }
    let mut by_dept: BTreeMap<&str, Vec<RawMessage>> = BTreeMap::new();
    for m in messages {
        by_dept.entry(owner[m.ticket_id.as_str()].1).or_default().push(m.clone());
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = by_dept
            .values()
            .map(|msgs| scope.spawn(move || prepare_tickets(normalizer, msgs, policy, job_id)))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("preparation thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serde_messages_name_fields() {
        assert_eq!(serde_field("unknown field `colour`, expected one of `a`"), "colour");
        assert_eq!(serde_field("missing field `records`"), "records");
        assert_eq!(serde_field("invalid type: string"), "request");
    }

    #[test]
    fn fault_injector_is_one_shot() {
        let f = FaultInjector::default();
        f.arm("merge");
        assert!(f.check("merge").is_err());
        assert!(f.check("merge").is_ok());
        assert!(f.check("append").is_ok());
    }
}
