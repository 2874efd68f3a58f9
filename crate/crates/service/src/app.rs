//! Startup wiring: engine context, index store, engine manager, orchestrator.

use std::sync::Arc;

use anyhow::Context;

use ticketsearch_core::engine::{EngineContext, EngineSnapshot};
use ticketsearch_core::index::IndexStore;
use ticketsearch_core::ingest::{EngineManager, Orchestrator, OrchestratorConfig};
use ticketsearch_core::query::{IntentLexicon, TranslationDictionary};
use ticketsearch_core::{CoverageReranker, HashingEmbedder};

use crate::config::ServiceConfig;

#[derive(Clone)]
pub struct AppState {
    pub manager: Arc<EngineManager>,
    pub orchestrator: Arc<Orchestrator>,
}

pub fn engine_context(config: &ServiceConfig) -> anyhow::Result<EngineContext> {
    let mut ctx = EngineContext::new(
        Arc::new(HashingEmbedder::default()),
        Arc::new(CoverageReranker),
        config.engine_settings(),
    );
    if let Some(path) = &config.variants.lexicon_path {
        ctx.lexicon = Arc::new(IntentLexicon::load(path).with_context(|| format!("loading {}", path.display()))?);
    }
    if let Some(path) = &config.variants.dictionary_path {
        ctx.dictionary =
            Arc::new(TranslationDictionary::load(path).with_context(|| format!("loading {}", path.display()))?);
    }
    Ok(ctx)
}

pub fn index_store(config: &ServiceConfig) -> IndexStore {
    IndexStore::new(config.index_dir()).with_retention(config.ingestion.backup_retention)
}

/// Opens the published artifact (creating an empty one on first start) and
/// starts the ingestion worker.
pub fn build_state(config: &ServiceConfig) -> anyhow::Result<AppState> {
    let ctx = engine_context(config)?;
    let manager = Arc::new(
        EngineManager::open(index_store(config), ctx, config.bm25).context("opening the index artifact")?,
    );
    let orchestrator = Orchestrator::start(orchestrator_config(config), manager.clone())?;
    Ok(AppState { manager, orchestrator })
}

pub fn orchestrator_config(config: &ServiceConfig) -> OrchestratorConfig {
    let mut oc = OrchestratorConfig::new(&config.storage.root);
    oc.departments = config.departments();
    oc.chunking = config.chunking;
    oc.normalizer = config.normalizer.clone();
    oc.watermark_overlap = chrono::Duration::hours(i64::from(config.ingestion.overlap_hours));
    oc.offload = config.offload.clone();
    oc
}

/// Read-only snapshot of the published artifact, for one-shot queries.
pub fn open_snapshot(config: &ServiceConfig) -> anyhow::Result<EngineSnapshot> {
    let ctx = engine_context(config)?;
    let store = index_store(config);
    let index = store
        .load(ctx.embedder.as_ref())
        .with_context(|| format!("loading the index under {}", config.index_dir().display()))?;
    let generation = index.meta.generation;
    Ok(EngineSnapshot::new(index, ctx, generation))
}
