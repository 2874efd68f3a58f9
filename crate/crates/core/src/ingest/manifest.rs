use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::corpus::{format_timestamp, now_seconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Web,
    Pdf,
    RepoDocs,
    RtWeekly,
}

impl JobKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JobKind::Web => "web",
            JobKind::Pdf => "pdf",
            JobKind::RepoDocs => "repo_docs",
            JobKind::RtWeekly => "rt_weekly",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running)
                | (JobState::Running, JobState::Succeeded)
                | (JobState::Running, JobState::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetric {
    pub stage: String,
    #[serde(with = "crate::corpus::timestamp")]
    pub started_at: DateTime<Utc>,
    pub duration_ms: f64,
    #[serde(default)]
    pub counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffloadStage {
    ResourceRequested,
    WaitingResources,
    RunningRemote,
    SyncBack,
}

impl OffloadStage {
    pub const ORDER: [OffloadStage; 4] = [
        OffloadStage::ResourceRequested,
        OffloadStage::WaitingResources,
        OffloadStage::RunningRemote,
        OffloadStage::SyncBack,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleasePolicy {
    #[default]
    Auto,
    ExplicitCancel,
}

impl std::str::FromStr for ReleasePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(ReleasePolicy::Auto),
            "explicit_cancel" => Ok(ReleasePolicy::ExplicitCancel),
            other => Err(format!("unknown release policy {other:?} (expected auto or explicit_cancel)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadStep {
    pub stage: OffloadStage,
    #[serde(with = "crate::corpus::timestamp")]
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadState {
    pub release_policy: ReleasePolicy,
    pub trail: Vec<OffloadStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_id: Option<String>,
    pub cancel_attempted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cancel_outcome: Option<String>,
}

impl OffloadState {
    pub fn new(release_policy: ReleasePolicy) -> Self {
        Self {
            release_policy,
            trail: Vec::new(),
            remote_id: None,
            cancel_attempted: false,
            cancel_outcome: None,
        }
    }

    pub fn stages(&self) -> Vec<OffloadStage> {
        self.trail.iter().map(|s| s.stage).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub current_stage: String,
    pub progress: f64,
    pub request: serde_json::Value,
    #[serde(default)]
    pub stages: Vec<StageMetric>,
    #[serde(with = "crate::corpus::timestamp")]
    pub created_at: DateTime<Utc>,
    #[serde(with = "crate::corpus::timestamp")]
    pub updated_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offload: Option<OffloadState>,
    /// Engine generation published by this job.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<u64>,
}

impl JobManifest {
    pub fn new(job_id: String, kind: JobKind, request: serde_json::Value) -> Self {
        let now = now_seconds();
        Self {
            job_id,
            kind,
            state: JobState::Queued,
            current_stage: "queued".into(),
            progress: 0.0,
            request,
            stages: Vec::new(),
            created_at: now,
            updated_at: now,
            error: None,
            failed_stage: None,
            offload: None,
            generation: None,
        }
    }

    pub fn transition(&mut self, next: JobState) -> Result<(), IngestError> {
        if !self.state.can_become(next) {
            return Err(IngestError::Transition {
                job_id: self.job_id.clone(),
                from: self.state,
                to: next,
            });
        }
        self.state = next;
        self.updated_at = now_seconds();
        Ok(())
    }
}

/// Writes `bytes` to `path` through a synced temporary file and a rename, so
/// readers only ever see the old or the new complete content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp-{}", uuid::Uuid::new_v4().simple()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(IngestError::io(path, e));
    }
    Ok(())
}

const MANIFEST: &str = "manifest.json";
const JOB_LOG: &str = "job.log";

/// `jobs/<job_id>/{manifest.json, job.log}`
#[derive(Debug, Clone)]
pub struct JobStore {
    root: PathBuf,
}

impl JobStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn job_dir(&self, job_id: &str) -> PathBuf {
        self.root.join(job_id)
    }

    pub fn manifest_path(&self, job_id: &str) -> PathBuf {
        self.job_dir(job_id).join(MANIFEST)
    }

    pub fn log_path(&self, job_id: &str) -> PathBuf {
        self.job_dir(job_id).join(JOB_LOG)
    }

    pub fn save(&self, manifest: &JobManifest) -> Result<(), IngestError> {
        let bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
        write_atomic(&self.manifest_path(&manifest.job_id), &bytes)
    }

    pub fn load(&self, job_id: &str) -> Result<JobManifest, IngestError> {
        let valid = !job_id.is_empty() && job_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        let path = self.manifest_path(job_id);
        if !valid || !path.exists() {
            return Err(IngestError::UnknownJob(job_id.to_string()));
        }
        let bytes = fs::read(&path).map_err(|e| IngestError::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| IngestError::CorruptManifest {
            path,
            message: e.to_string(),
        })
    }

    /// All manifests, oldest first.
    pub fn list(&self) -> Result<Vec<JobManifest>, IngestError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(IngestError::io(&self.root, e)),
        };
        let mut out = Vec::new();
        for entry in entries.flatten() {
            let Some(id) = entry.file_name().to_str().map(str::to_string) else {
                continue;
            };
            if entry.path().join(MANIFEST).exists() {
                out.push(self.load(&id)?);
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.job_id.cmp(&b.job_id)));
        Ok(out)
    }

    pub fn log(&self, job_id: &str, line: &str) {
        let path = self.log_path(job_id);
        if let Some(dir) = path.parent() {
            let _ = fs::create_dir_all(dir);
        }
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(&path) {
            let _ = writeln!(f, "{} {line}", format_timestamp(&Utc::now()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions() {
        use JobState::*;
        assert!(Queued.can_become(Running));
        assert!(Running.can_become(Failed));
        assert!(!Queued.can_become(Succeeded));
        assert!(!Succeeded.can_become(Running));
        assert!(!Failed.can_become(Succeeded));
    }

    #[test]
    fn manifest_round_trip_and_listing() {
        let dir = tempfile::tempdir().unwrap();
        let store = JobStore::new(dir.path());
        let mut m = JobManifest::new("job-1".into(), JobKind::RtWeekly, serde_json::json!({"synthetic": {"seed": 1}}));
        store.save(&m).unwrap();
        m.transition(JobState::Running).unwrap();
        m.offload = Some(OffloadState::new(ReleasePolicy::ExplicitCancel));
        store.save(&m).unwrap();
        assert_eq!(store.load("job-1").unwrap(), m);
        assert_eq!(store.list().unwrap().len(), 1);
        assert!(matches!(store.load("nope"), Err(IngestError::UnknownJob(_))));
        assert!(matches!(store.load("../x"), Err(IngestError::UnknownJob(_))));
        let leftovers: Vec<_> = fs::read_dir(store.job_dir("job-1"))
            .unwrap()
            .flatten()
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp-"))
            .collect();
        assert!(leftovers.is_empty());
        store.log("job-1", "hello");
        assert!(fs::read_to_string(store.log_path("job-1")).unwrap().ends_with("hello\n"));
    }

    #[test]
    fn release_policy_parsing() {
        assert_eq!("auto".parse::<ReleasePolicy>().unwrap(), ReleasePolicy::Auto);
        assert_eq!("EXPLICIT_CANCEL".parse::<ReleasePolicy>().unwrap(), ReleasePolicy::ExplicitCancel);
        assert!("later".parse::<ReleasePolicy>().is_err());
    }
}
