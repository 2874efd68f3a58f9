//! On-disk index generations and atomic promotion.
//!
//! ```text
//! <root>/
//!   active -> generations/gen-000007     symlink, swapped by a single rename
//!   generations/gen-000007/              meta.json dense.bin docstore.jsonl lexical.json
//!   backups/20261016T101500Z-g000006/    previous generations, newest 5 kept
//! ```
//!
//! A generation directory is never modified after it is promoted, so a
//! reader that resolved `active` always sees one complete generation. The
//! only hazard is a generation being rotated into `backups/` mid-read, which
//! surfaces as `NotFound` and is handled by re-resolving `active`.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{indexed_text, Bm25Params, DenseIndex, HybridIndex, IndexError, LexicalIndex};
use crate::corpus::{self, ChunkRecord};
use crate::embed::Embedder;

pub const ARTIFACT_VERSION: u32 = 1;
pub const DEFAULT_BACKUP_RETENTION: usize = 5;

const META: &str = "meta.json";
const DENSE: &str = "dense.bin";
const DOCSTORE: &str = "docstore.jsonl";
const LEXICAL: &str = "lexical.json";
const ACTIVE: &str = "active";
const GENERATIONS: &str = "generations";
const BACKUPS: &str = "backups";
const LOAD_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub artifact_version: u32,
    pub generation: u64,
    pub record_count: usize,
    pub embedder_id: String,
    pub dimension: usize,
    pub bm25: Bm25Params,
    #[serde(with = "crate::corpus::timestamp")]
    pub created_at: DateTime<Utc>,
}

impl ArtifactMeta {
    pub fn new(embedder: &dyn Embedder, record_count: usize, bm25: Bm25Params, generation: u64) -> Self {
        Self {
            artifact_version: ARTIFACT_VERSION,
            generation,
            record_count,
            embedder_id: embedder.identity(),
            dimension: embedder.dimension(),
            bm25,
            created_at: Utc::now(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppendReport {
    pub accepted: usize,
    pub duplicates: usize,
    pub record_count: usize,
    pub generation: u64,
    pub backup: Option<PathBuf>,
}

/// Root directory holding the active generation and its backups.
#[derive(Debug, Clone)]
pub struct IndexStore {
    root: PathBuf,
    retention: usize,
}

fn write_synced(path: &Path, write: impl FnOnce(&mut BufWriter<&File>) -> std::io::Result<()>) -> Result<(), IndexError> {
    let file = File::create(path).map_err(|e| IndexError::io(path, e))?;
    let mut out = BufWriter::new(&file);
    write(&mut out).map_err(|e| IndexError::io(path, e))?;
    out.flush().map_err(|e| IndexError::io(path, e))?;
    drop(out);
    file.sync_all().map_err(|e| IndexError::io(path, e))
}

fn sync_dir(path: &Path) {
    if let Ok(dir) = File::open(path) {
        let _ = dir.sync_all();
    }
}

/// Writes all four files of `index` into `dir`.
pub(crate) fn write_generation(index: &HybridIndex, dir: &Path) -> Result<(), IndexError> {
    fs::create_dir_all(dir).map_err(|e| IndexError::io(dir, e))?;
    write_synced(&dir.join(DENSE), |out| index.dense.write_to(out))?;
    write_synced(&dir.join(DOCSTORE), |out| corpus::write_jsonl(&index.docstore, out))?;
    write_synced(&dir.join(LEXICAL), |out| out.write_all(&index.lexical.to_json()))?;
    // meta goes last: a directory without it is never mistaken for a generation
    let meta = serde_json::to_vec_pretty(&index.meta).expect("meta serializes");
    write_synced(&dir.join(META), |out| out.write_all(&meta))?;
    sync_dir(dir);
    Ok(())
}

/// Loads and fully validates one generation directory.
pub(crate) fn read_generation(dir: &Path, embedder: &dyn Embedder) -> Result<HybridIndex, IndexError> {
    let meta_path = dir.join(META);
    let meta_bytes = fs::read(&meta_path).map_err(|e| IndexError::io(&meta_path, e))?;
    let meta: ArtifactMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| IndexError::Corrupt(format!("meta.json: {e}")))?;
    if meta.artifact_version != ARTIFACT_VERSION {
        return Err(IndexError::Corrupt(format!(
            "unsupported artifact version {}",
            meta.artifact_version
        )));
    }
    if meta.embedder_id != embedder.identity() {
        return Err(IndexError::EmbedderMismatch {
            artifact: meta.embedder_id,
            active: embedder.identity(),
        });
    }

    let dense_path = dir.join(DENSE);
    let dense = DenseIndex::read_from(BufReader::new(
        File::open(&dense_path).map_err(|e| IndexError::io(&dense_path, e))?,
    ))?;

    let docstore_path = dir.join(DOCSTORE);
    let file = File::open(&docstore_path).map_err(|e| IndexError::io(&docstore_path, e))?;
    let mut docstore = Vec::with_capacity(meta.record_count);
    for (i, line) in std::io::BufRead::lines(BufReader::new(file)).enumerate() {
        let line = line.map_err(|e| IndexError::io(&docstore_path, e))?;
        if line.is_empty() {
            continue;
        }
        let record: ChunkRecord = serde_json::from_str(&line)
            .map_err(|e| IndexError::Corrupt(format!("docstore line {}: {e}", i + 1)))?;
        docstore.push(record);
    }

    let lexical_path = dir.join(LEXICAL);
    let lexical_bytes = fs::read(&lexical_path).map_err(|e| IndexError::io(&lexical_path, e))?;
    let lexical = LexicalIndex::from_json(&lexical_bytes)?;
    if lexical.params() != meta.bm25 {
        return Err(IndexError::Validation("lexical parameters disagree with meta.json".into()));
    }

    let index = HybridIndex {
        meta,
        dense,
        lexical,
        docstore,
    };
    index.validate()?;
    Ok(index)
}

impl IndexStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            retention: DEFAULT_BACKUP_RETENTION,
        }
    }

    pub fn with_retention(mut self, retention: usize) -> Self {
        self.retention = retention;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn active_link(&self) -> PathBuf {
        self.root.join(ACTIVE)
    }

    pub fn has_active(&self) -> bool {
        fs::symlink_metadata(self.active_link()).is_ok()
    }

    /// Directory the `active` pointer currently resolves to.
    pub fn active_dir(&self) -> Result<PathBuf, IndexError> {
        let link = self.active_link();
        match fs::read_link(&link) {
            Ok(target) => Ok(self.root.join(target)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(IndexError::NoActive(self.root.clone())),
            Err(e) => Err(IndexError::io(link, e)),
        }
    }

    pub fn backups(&self) -> Vec<PathBuf> {
        let mut out: Vec<PathBuf> = fs::read_dir(self.root.join(BACKUPS))
            .into_iter()
            .flatten()
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        out.sort();
        out
    }

    /// Loads the active generation, re-resolving the pointer if a rotation
    /// removed the directory mid-read.
    pub fn load(&self, embedder: &dyn Embedder) -> Result<HybridIndex, IndexError> {
        let mut last_err = None;
        for _ in 0..LOAD_ATTEMPTS {
            let dir = self.active_dir()?;
            match read_generation(&dir, embedder) {
                Ok(index) => return Ok(index),
                Err(e) if e.is_not_found() => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.unwrap_or_else(|| IndexError::NoActive(self.root.clone())))
    }

    /// Builds an index over `records` and promotes it as the next generation.
    pub fn build_and_publish(
        &self,
        records: Vec<ChunkRecord>,
        embedder: &dyn Embedder,
        params: Bm25Params,
    ) -> Result<HybridIndex, IndexError> {
        let mut index = HybridIndex::build(records, embedder, params);
        index.meta.generation = self.current_generation().map_or(1, |g| g + 1);
        let expected = index.len();
        self.promote(&index, embedder, expected, &mut |_| Ok(()))?;
        Ok(index)
    }

    fn current_generation(&self) -> Option<u64> {
        let dir = self.active_dir().ok()?;
        let bytes = fs::read(dir.join(META)).ok()?;
        serde_json::from_slice::<ArtifactMeta>(&bytes).ok().map(|m| m.generation)
    }

    /// Appends `delta` to the active generation; see [`Self::append_delta_with_hook`].
    pub fn append_delta(&self, delta: &[ChunkRecord], embedder: &dyn Embedder) -> Result<AppendReport, IndexError> {
        self.append_delta_with_hook(delta, embedder, &mut |_| Ok(()))
    }

    /// Loads the active generation, drops delta records whose identity is
    /// already indexed (or repeated within the delta), embeds the rest and
    /// writes old + new rows to a staging directory. `before_revalidate` runs
    /// on the staging directory before it is re-read and re-validated; only
    /// then is it promoted. On any error the active generation is untouched.
    pub fn append_delta_with_hook(
        &self,
        delta: &[ChunkRecord],
        embedder: &dyn Embedder,
        before_revalidate: &mut dyn FnMut(&Path) -> std::io::Result<()>,
    ) -> Result<AppendReport, IndexError> {
        let active = self.load(embedder)?;
        let old_count = active.len();
        let mut known: HashSet<_> = active.keys().collect();
        let accepted: Vec<ChunkRecord> = delta.iter().filter(|r| known.insert(r.key())).cloned().collect();
        let duplicates = delta.len() - accepted.len();

        let texts: Vec<String> = accepted.iter().map(indexed_text).collect();
        let vectors = embedder.embed_batch(&texts);
        let mut dense = active.dense.clone();
        for v in &vectors {
            dense.push(v);
        }
        if dense.rows() != old_count + accepted.len() {
            return Err(IndexError::Validation("dense index did not grow by the accepted delta".into()));
        }
        let mut docstore = active.docstore;
        docstore.extend(accepted.iter().cloned());
        let params = active.meta.bm25;
        let lexical = LexicalIndex::build(docstore.iter().map(indexed_text).collect::<Vec<_>>().iter().map(String::as_str), params);
        let generation = active.meta.generation + 1;
        let merged = HybridIndex {
            meta: ArtifactMeta::new(embedder, docstore.len(), params, generation),
            dense,
            lexical,
            docstore,
        };
        merged.validate()?;
        let expected = old_count + accepted.len();
        let backup = self.promote(&merged, embedder, expected, before_revalidate)?;
        Ok(AppendReport {
            accepted: accepted.len(),
            duplicates,
            record_count: expected,
            generation,
            backup,
        })
    }

    fn promote(
        &self,
        index: &HybridIndex,
        embedder: &dyn Embedder,
        expected_records: usize,
        before_revalidate: &mut dyn FnMut(&Path) -> std::io::Result<()>,
    ) -> Result<Option<PathBuf>, IndexError> {
        let generations = self.root.join(GENERATIONS);
        fs::create_dir_all(&generations).map_err(|e| IndexError::io(&generations, e))?;
        let staging = self.root.join(format!(".staging-{}", uuid::Uuid::new_v4().simple()));
        let result = self.stage_and_promote(index, embedder, expected_records, before_revalidate, &staging);
        if result.is_err() {
            let _ = fs::remove_dir_all(&staging);
        }
        result
    }

    fn stage_and_promote(
        &self,
        index: &HybridIndex,
        embedder: &dyn Embedder,
        expected_records: usize,
        before_revalidate: &mut dyn FnMut(&Path) -> std::io::Result<()>,
        staging: &Path,
    ) -> Result<Option<PathBuf>, IndexError> {
        write_generation(index, staging)?;
        before_revalidate(staging).map_err(|e| IndexError::io(staging, e))?;
        let staged = read_generation(staging, embedder)?;
        if staged.len() != expected_records {
            return Err(IndexError::Validation(format!(
                "staged generation holds {} records, expected {expected_records}",
                staged.len()
            )));
        }

        let name = format!("gen-{:06}", index.meta.generation);
        let final_dir = self.root.join(GENERATIONS).join(&name);
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir).map_err(|e| IndexError::io(&final_dir, e))?;
        }
        fs::rename(staging, &final_dir).map_err(|e| IndexError::io(&final_dir, e))?;
        let previous = self.active_dir().ok();

        let tmp_link = self.root.join(format!(".active-{}", uuid::Uuid::new_v4().simple()));
        let target = Path::new(GENERATIONS).join(&name);
        symlink_dir(&target, &tmp_link).map_err(|e| IndexError::io(&tmp_link, e))?;
        fs::rename(&tmp_link, self.active_link()).map_err(|e| IndexError::io(self.active_link(), e))?;
        sync_dir(&self.root);

        let backup = match previous {
            Some(prev) if prev != final_dir => Some(self.rotate_to_backup(&prev)?),
            _ => None,
        };
        self.prune_backups();
        Ok(backup)
    }

    fn rotate_to_backup(&self, dir: &Path) -> Result<PathBuf, IndexError> {
        let backups = self.root.join(BACKUPS);
        fs::create_dir_all(&backups).map_err(|e| IndexError::io(&backups, e))?;
        let generation = fs::read(dir.join(META))
            .ok()
            .and_then(|b| serde_json::from_slice::<ArtifactMeta>(&b).ok())
            .map_or(0, |m| m.generation);
        let name = format!("{}-g{generation:06}", Utc::now().format("%Y%m%dT%H%M%SZ"));
        let dest = backups.join(name);
        fs::rename(dir, &dest).map_err(|e| IndexError::io(&dest, e))?;
        Ok(dest)
    }

    fn prune_backups(&self) {
        let backups = self.backups();
        if backups.len() > self.retention {
            for old in &backups[..backups.len() - self.retention] {
                let _ = fs::remove_dir_all(old);
            }
        }
    }
}

#[cfg(unix)]
fn symlink_dir(target: &Path, link: &Path) -> std::io::Result<()> {
    std::os::unix::fs::symlink(target, link)
}

#[cfg(windows)]
fn symlink_dir(target: &Path, link: &Path) -> std::io::Result<()> {
    std::os::windows::fs::symlink_dir(target, link)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEmbedder;
    use crate::index::tests::rec;
    use crate::index::FilterSet;

    fn records(range: std::ops::Range<usize>) -> Vec<ChunkRecord> {
        range
            .map(|i| rec(&format!("t{i}"), &format!("ticket number {i} about gpu node {}", i % 3), "systems"))
            .collect()
    }

    fn store_with(n: usize) -> (tempfile::TempDir, IndexStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = IndexStore::new(dir.path());
        store
            .build_and_publish(records(0..n), &HashingEmbedder::default(), Bm25Params::default())
            .unwrap();
        (dir, store)
    }

    #[test]
    fn append_rotates_previous_generation() {
        let (_dir, store) = store_with(10);
        let e = HashingEmbedder::default();
        let report = store.append_delta(&records(10..15), &e).unwrap();
        assert_eq!(report.accepted, 5);
        assert_eq!(report.record_count, 15);
        assert_eq!(store.load(&e).unwrap().len(), 15);
        let backup = report.backup.unwrap();
        assert_eq!(read_generation(&backup, &e).unwrap().len(), 10);
    }

    #[test]
    fn empty_delta_still_promotes() {
        let (_dir, store) = store_with(4);
        let e = HashingEmbedder::default();
        let before = store.load(&e).unwrap();
        let report = store.append_delta(&[], &e).unwrap();
        let after = store.load(&e).unwrap();
        assert_eq!(report.generation, before.meta.generation + 1);
        assert_eq!(after.docstore, before.docstore);
        assert_eq!(store.backups().len(), 1);
    }

    #[test]
    fn duplicates_are_dropped() {
        let (_dir, store) = store_with(5);
        let e = HashingEmbedder::default();
        let mut delta = records(3..8);
        delta.push(delta[4].clone());
        let report = store.append_delta(&delta, &e).unwrap();
        assert_eq!((report.accepted, report.duplicates), (3, 3));
        assert_eq!(store.load(&e).unwrap().len(), 8);
    }

    #[test]
    fn truncated_staging_fails_and_keeps_active() {
        let (_dir, store) = store_with(10);
        let e = HashingEmbedder::default();
        let err = store
            .append_delta_with_hook(&records(10..15), &e, &mut |staging| {
                let path = staging.join(DOCSTORE);
                let text = fs::read_to_string(&path)?;
                let kept: Vec<&str> = text.lines().take(12).collect();
                fs::write(&path, kept.join("\n") + "\n")
            })
            .unwrap_err();
        assert!(matches!(err, IndexError::Validation(_)), "{err}");
        let active = store.load(&e).unwrap();
        assert_eq!(active.len(), 10);
        assert!(store.backups().is_empty());
        let leftovers: Vec<_> = fs::read_dir(store.root())
            .unwrap()
            .flatten()
            .filter(|e| e.file_name().to_string_lossy().starts_with(".staging"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn retention_keeps_newest_backups() {
        let (_dir, store) = store_with(2);
        let store = store.with_retention(2);
        let e = HashingEmbedder::default();
        for i in 0..4 {
            store.append_delta(&records(2 + i..3 + i), &e).unwrap();
        }
        let backups = store.backups();
        assert_eq!(backups.len(), 2);
        let gens: Vec<u64> = backups
            .iter()
            .map(|b| read_generation(b, &e).unwrap().meta.generation)
            .collect();
        assert_eq!(gens, [3, 4]);
    }

    #[test]
    fn embedder_mismatch_is_rejected() {
        let (_dir, store) = store_with(2);
        let err = store.load(&HashingEmbedder::new(99)).unwrap_err();
        assert!(matches!(err, IndexError::EmbedderMismatch { .. }));
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let e = HashingEmbedder::default();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            IndexStore::new(d.path())
                .build_and_publish(records(0..20), &e, Bm25Params::default())
                .unwrap();
        }
        let read = |d: &tempfile::TempDir| fs::read(IndexStore::new(d.path()).active_dir().unwrap().join(DENSE)).unwrap();
        assert_eq!(read(&a), read(&b));
    }

    #[test]
    fn docstore_survives_without_corpus() {
        let (_dir, store) = store_with(6);
        let e = HashingEmbedder::default();
        let index = store.load(&e).unwrap();
        assert_eq!(index.docstore, records(0..6));
        let hits = index.lexical_search(&["5".into()], 3, &FilterSet::default());
        assert_eq!(index.docstore[hits[0].doc].ticket_id, "t5");
    }
}
