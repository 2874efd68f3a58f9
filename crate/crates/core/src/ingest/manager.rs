use std::sync::Arc;

use arc_swap::ArcSwap;
use parking_lot::Mutex;

use crate::engine::{EngineContext, EngineSnapshot};
use crate::index::{Bm25Params, HybridIndex, IndexError, IndexStore};

/// Owns the published engine. Builds are serialized by `build_lock`; queries
/// read the current snapshot through a lock-free pointer, so a reload never
/// blocks them and in-flight queries keep the snapshot they started with.
pub struct EngineManager {
    store: IndexStore,
    context: EngineContext,
    build_lock: Mutex<()>,
    current: ArcSwap<EngineSnapshot>,
}

impl std::fmt::Debug for EngineManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EngineManager")
            .field("root", &self.store.root())
            .field("generation", &self.generation())
            .finish_non_exhaustive()
    }
}

impl EngineManager {
    /// Loads the active artifact (publishing an empty one first if the store
    /// has none) as generation 1.
    pub fn open(store: IndexStore, context: EngineContext, bm25: Bm25Params) -> Result<Self, IndexError> {
        if !store.has_active() {
            store.build_and_publish(Vec::new(), context.embedder.as_ref(), bm25)?;
        }
        let index = store.load(context.embedder.as_ref())?;
        index.validate()?;
        let snapshot = EngineSnapshot::new(index, context.clone(), 1);
        Ok(Self {
            store,
            context,
            build_lock: Mutex::new(()),
            current: ArcSwap::from_pointee(snapshot),
        })
    }

    pub fn store(&self) -> &IndexStore {
        &self.store
    }

    pub fn context(&self) -> &EngineContext {
        &self.context
    }

    pub fn snapshot(&self) -> Arc<EngineSnapshot> {
        self.current.load_full()
    }

    pub fn generation(&self) -> u64 {
        self.current.load().generation
    }

    /// Rebuilds from the active artifact and publishes generation + 1.
    pub fn reload(&self) -> Result<u64, IndexError> {
        self.reload_with(|store, ctx| store.load(ctx.embedder.as_ref()))
    }

    /// Like [`Self::reload`] with a custom loader; on error nothing changes.
    pub fn reload_with(
        &self,
        load: impl FnOnce(&IndexStore, &EngineContext) -> Result<HybridIndex, IndexError>,
    ) -> Result<u64, IndexError> {
        let _build = self.build_lock.lock();
        let index = load(&self.store, &self.context)?;
        index.validate()?;
        let generation = self.generation() + 1;
        let snapshot = Arc::new(EngineSnapshot::new(index, self.context.clone(), generation));
        self.current.store(snapshot);
        Ok(generation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EngineSettings, SearchRequest};
    use crate::index::tests::rec;
    use crate::{CoverageReranker, HashingEmbedder};

    fn context() -> EngineContext {
        EngineContext::new(
            Arc::new(HashingEmbedder::default()),
            Arc::new(CoverageReranker),
            EngineSettings::default(),
        )
    }

    #[test]
    fn fresh_store_starts_empty_at_generation_one() {
        let dir = tempfile::tempdir().unwrap();
        let m = EngineManager::open(IndexStore::new(dir.path()), context(), Bm25Params::default()).unwrap();
        assert_eq!(m.generation(), 1);
        assert_eq!(m.snapshot().documents(), 0);
        let r = m.snapshot().search(&SearchRequest::new("anything")).unwrap();
        assert!(r.results.is_empty());
    }

    #[test]
    fn failed_reload_keeps_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let store = IndexStore::new(dir.path());
        let e = HashingEmbedder::default();
        store
            .build_and_publish(vec![rec("1", "gpu node down again", "systems")], &e, Bm25Params::default())
            .unwrap();
        let m = EngineManager::open(store, context(), Bm25Params::default()).unwrap();
        let before = m.snapshot().search(&SearchRequest::new("gpu node")).unwrap();
        assert_eq!(m.reload().unwrap(), 2);
        let err = m.reload_with(|_, _| Err(IndexError::Corrupt("injected".into())));
        assert!(err.is_err());
        assert_eq!(m.generation(), 2);
        let after = m.snapshot().search(&SearchRequest::new("gpu node")).unwrap();
        assert_eq!(before.results, after.results);
    }
}
