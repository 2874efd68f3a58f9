//! Ingestion jobs: manifests, the serialized mutation section, engine
//! hot-swap, the weekly watermark cycle and simulated remote offload.

mod docs;
mod manager;
mod manifest;
mod offload;
mod orchestrator;
mod source;
mod watermark;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use docs::{chunk_documents, clean_document, source_type_for, DocsRequest, DocumentRecord};
pub use manager::EngineManager;
pub use manifest::{
    write_atomic, JobKind, JobManifest, JobState, JobStore, OffloadStage, OffloadState, OffloadStep, ReleasePolicy,
    StageMetric,
};
pub use offload::{offload_execute, OffloadSettings, RemoteExecutor, SimulatedExecutor, Workload};
pub use orchestrator::{
    CatalogEntry, FaultInjector, LockSpan, Orchestrator, OrchestratorConfig, RtWeeklyRequest, DOCS_STAGES,
    RT_WEEKLY_STAGES,
};
pub use source::{tickets_in_window, JsonlSource, MemorySource, SyntheticSource, TicketSource};
pub use watermark::{Watermark, WatermarkFile};

use crate::corpus::CorpusError;
use crate::index::IndexError;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{field}: {message}")]
    Validation { field: String, message: String },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("injected failure at stage {0}")]
    Injected(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("offload: {0}")]
    Offload(String),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("corrupt file {path}: {message}")]
    CorruptManifest { path: PathBuf, message: String },
    #[error("job {job_id}: illegal transition {from:?} -> {to:?}")]
    Transition {
        job_id: String,
        from: JobState,
        to: JobState,
    },
    #[error("job queue is closed")]
    QueueClosed,
}

impl IngestError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Field name for validation errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            IngestError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}
