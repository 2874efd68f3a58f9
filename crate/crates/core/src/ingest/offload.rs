use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::manifest::{OffloadStage, OffloadState, OffloadStep, ReleasePolicy};
use super::IngestError;
use crate::corpus::ChunkRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OffloadSettings {
    pub enabled: bool,
    pub release_policy: ReleasePolicy,
    /// Simulated wait for remote resources.
    pub queue_delay_ms: u64,
}

impl Default for OffloadSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            release_policy: ReleasePolicy::Auto,
            queue_delay_ms: 0,
        }
    }
}

pub type Workload<'a> = Box<dyn FnOnce() -> Result<Vec<ChunkRecord>, IngestError> + Send + 'a>;

/// A batch system that runs preparation workloads away from the service.
pub trait RemoteExecutor: Send + Sync {
    /// Requests resources; returns the remote allocation id.
    fn request(&self, job_id: &str) -> Result<String, IngestError>;
    fn wait_ready(&self, remote_id: &str) -> Result<(), IngestError>;
    fn run(&self, remote_id: &str, workload: Workload<'_>) -> Result<Vec<ChunkRecord>, IngestError>;
    fn sync_back(&self, remote_id: &str, output: Vec<ChunkRecord>) -> Result<Vec<ChunkRecord>, IngestError>;
    fn cancel(&self, remote_id: &str) -> Result<(), IngestError>;
}

/// In-process stand-in for a remote scheduler, with failure injection and a
/// record of every call.
#[derive(Debug, Default)]
pub struct SimulatedExecutor {
    pub queue_delay: Duration,
    fail_next_run: AtomicBool,
    fail_next_cancel: AtomicBool,
    next_id: AtomicUsize,
    calls: Mutex<Vec<String>>,
}

impl SimulatedExecutor {
    pub fn new(queue_delay: Duration) -> Self {
        Self {
            queue_delay,
            ..Self::default()
        }
    }

    pub fn fail_next_run(&self) {
        self.fail_next_run.store(true, Ordering::SeqCst);
    }

    pub fn fail_next_cancel(&self) {
        self.fail_next_cancel.store(true, Ordering::SeqCst);
    }

    /// Call names in order, e.g. `["request", "wait", "run", "sync", "cancel"]`.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().clone()
    }

    fn record(&self, call: &str) {
        self.calls.lock().push(call.to_string());
    }
}

impl RemoteExecutor for SimulatedExecutor {
    fn request(&self, job_id: &str) -> Result<String, IngestError> {
        self.record("request");
        let n = self.next_id.fetch_add(1, Ordering::SeqCst);
        Ok(format!("sim-{n}-{job_id}"))
    }

    fn wait_ready(&self, _remote_id: &str) -> Result<(), IngestError> {
        self.record("wait");
        if !self.queue_delay.is_zero() {
            std::thread::sleep(self.queue_delay);
        }
        Ok(())
    }

    fn run(&self, remote_id: &str, workload: Workload<'_>) -> Result<Vec<ChunkRecord>, IngestError> {
        self.record("run");
        if self.fail_next_run.swap(false, Ordering::SeqCst) {
            return Err(IngestError::Offload(format!("remote job {remote_id} failed")));
        }
        workload()
    }

    fn sync_back(&self, _remote_id: &str, output: Vec<ChunkRecord>) -> Result<Vec<ChunkRecord>, IngestError> {
        self.record("sync");
        Ok(output)
    }

    fn cancel(&self, remote_id: &str) -> Result<(), IngestError> {
        self.record("cancel");
        if self.fail_next_cancel.swap(false, Ordering::SeqCst) {
            return Err(IngestError::Offload(format!("cancel of {remote_id} failed")));
        }
        Ok(())
    }
}

/// Runs `workload` through `executor`, reporting every stage transition to
/// `persist` before the stage starts. Cancellation is attempted after any
/// failure, and after success under [`ReleasePolicy::ExplicitCancel`].
pub fn offload_execute(
    job_id: &str,
    executor: &dyn RemoteExecutor,
    policy: ReleasePolicy,
    workload: Workload<'_>,
    persist: &mut dyn FnMut(&OffloadState) -> Result<(), IngestError>,
) -> Result<Vec<ChunkRecord>, IngestError> {
    let mut state = OffloadState::new(policy);
    let mut enter = |state: &mut OffloadState, stage: OffloadStage| {
        state.trail.push(OffloadStep {
            stage,
            at: crate::corpus::now_seconds(),
        });
        persist(state)
    };

    enter(&mut state, OffloadStage::ResourceRequested)?;
    let remote_id = executor.request(job_id)?;
    state.remote_id = Some(remote_id.clone());

    let outcome = (|| {
        enter(&mut state, OffloadStage::WaitingResources)?;
        executor.wait_ready(&remote_id)?;
        enter(&mut state, OffloadStage::RunningRemote)?;
        let output = executor.run(&remote_id, workload)?;
        enter(&mut state, OffloadStage::SyncBack)?;
        executor.sync_back(&remote_id, output)
    })();

    if outcome.is_err() || policy == ReleasePolicy::ExplicitCancel {
        state.cancel_attempted = true;
        state.cancel_outcome = Some(match executor.cancel(&remote_id) {
            Ok(()) => "cancelled".into(),
            Err(e) => format!("cancel failed: {e}"),
        });
        persist(&state)?;
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(policy: ReleasePolicy, sim: &SimulatedExecutor) -> (Result<Vec<ChunkRecord>, IngestError>, Vec<OffloadState>) {
        let mut persisted = Vec::new();
        let result = offload_execute(
            "job",
            sim,
            policy,
            Box::new(|| Ok(Vec::new())),
            &mut |s| {
                persisted.push(s.clone());
                Ok(())
            },
        );
        (result, persisted)
    }

    #[test]
    fn auto_policy_happy_path() {
        let sim = SimulatedExecutor::default();
        let (r, persisted) = run(ReleasePolicy::Auto, &sim);
        r.unwrap();
        let last = persisted.last().unwrap();
        assert_eq!(last.stages(), OffloadStage::ORDER);
        assert!(!last.cancel_attempted);
        assert_eq!(sim.calls(), ["request", "wait", "run", "sync"]);
    }

    #[test]
    fn explicit_cancel_on_success() {
        let sim = SimulatedExecutor::default();
        let (r, persisted) = run(ReleasePolicy::ExplicitCancel, &sim);
        r.unwrap();
        let last = persisted.last().unwrap();
        assert_eq!(last.stages(), OffloadStage::ORDER);
        assert!(last.cancel_attempted);
        assert_eq!(sim.calls().iter().filter(|c| *c == "cancel").count(), 1);
    }

    #[test]
    fn remote_failure_cancels_and_skips_sync() {
        let sim = SimulatedExecutor::default();
        sim.fail_next_run();
        let (r, persisted) = run(ReleasePolicy::Auto, &sim);
        assert!(r.is_err());
        let last = persisted.last().unwrap();
        assert_eq!(last.stages(), &OffloadStage::ORDER[..3]);
        assert!(last.cancel_attempted);
        assert_eq!(sim.calls(), ["request", "wait", "run", "cancel"]);
    }

    #[test]
    fn failed_cancel_is_recorded() {
        let sim = SimulatedExecutor::default();
        sim.fail_next_run();
        sim.fail_next_cancel();
        let (_, persisted) = run(ReleasePolicy::Auto, &sim);
        assert!(persisted.last().unwrap().cancel_outcome.as_deref().unwrap().starts_with("cancel failed"));
    }
}
