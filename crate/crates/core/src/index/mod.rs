//! Dense + lexical indexes over one shared docstore.

mod artifact;
mod dense;
mod lexical;

use std::collections::BTreeSet;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ChunkKey, ChunkRecord, SourceType};
use crate::embed::{Embedder, Embedding};

pub use artifact::{AppendReport, ArtifactMeta, IndexStore, ARTIFACT_VERSION, DEFAULT_BACKUP_RETENTION};
pub use dense::DenseIndex;
pub use lexical::{Bm25Params, LexicalIndex};

/// Position of a record in the docstore; also its row in the dense matrix.
pub type DocId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub doc: DocId,
    pub score: f64,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index artifact: {0}")]
    Corrupt(String),
    #[error("embedder mismatch: artifact built with {artifact}, active embedder is {active}")]
    EmbedderMismatch { artifact: String, active: String },
    #[error("no active index under {0}")]
    NoActive(PathBuf),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl IndexError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IndexError::Io {
            path: path.into(),
            source,
        }
    }

    fn is_not_found(&self) -> bool {
        matches!(self, IndexError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

/// Post-filters applied to channel results before truncation to `k`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSet {
    pub department: Option<String>,
    pub date_from: Option<DateTime<Utc>>,
    /// Inclusive.
    pub date_to: Option<DateTime<Utc>>,
    pub source_types: Option<BTreeSet<SourceType>>,
}

impl FilterSet {
    pub fn matches(&self, record: &ChunkRecord) -> bool {
        if let Some(dept) = &self.department {
            if &record.department != dept {
                return false;
            }
        }
        if let Some(from) = self.date_from {
            if record.last_updated < from {
                return false;
            }
        }
        if let Some(to) = self.date_to {
            if record.last_updated > to {
                return false;
            }
        }
        if let Some(types) = &self.source_types {
            if !types.contains(&record.source_type) {
                return false;
            }
        }
        true
    }

    pub fn is_temporal(&self) -> bool {
        self.date_from.is_some() || self.date_to.is_some()
    }

    pub fn is_department(&self) -> bool {
        self.department.is_some()
    }

    pub fn is_empty(&self) -> bool {
        *self == FilterSet::default()
    }
}

/// Text fed to every index and to the reranker: the title (when present)
/// followed by the chunk text.
pub fn indexed_text(record: &ChunkRecord) -> String {
    if record.title.is_empty() {
        record.text.clone()
    } else {
        format!("{}\n{}", record.title, record.text)
    }
}

/// One loaded (or freshly built) index generation.
#[derive(Debug, Clone)]
pub struct HybridIndex {
    pub meta: ArtifactMeta,
    pub dense: DenseIndex,
    pub lexical: LexicalIndex,
    pub docstore: Vec<ChunkRecord>,
}

impl HybridIndex {
    /// Embeds and indexes `records` in order; row `i` is `records[i]`.
    pub fn build(records: Vec<ChunkRecord>, embedder: &dyn Embedder, params: Bm25Params) -> Self {
        let texts: Vec<String> = records.iter().map(indexed_text).collect();
        let vectors = embedder.embed_batch(&texts);
        let mut dense = DenseIndex::new(embedder.dimension());
        for v in &vectors {
            dense.push(v);
        }
        let lexical = LexicalIndex::build(texts.iter().map(String::as_str), params);
        let meta = ArtifactMeta::new(embedder, records.len(), params, 0);
        Self {
            meta,
            dense,
            lexical,
            docstore: records,
        }
    }

    pub fn len(&self) -> usize {
        self.docstore.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docstore.is_empty()
    }

    /// Row/record/posting counts agree, identities are unique.
    pub fn validate(&self) -> Result<(), IndexError> {
        let n = self.docstore.len();
        if self.dense.rows() != n {
            return Err(IndexError::Validation(format!(
                "dense rows {} != docstore length {n}",
                self.dense.rows()
            )));
        }
        if self.lexical.doc_count() != n {
            return Err(IndexError::Validation(format!(
                "lexical document count {} != docstore length {n}",
                self.lexical.doc_count()
            )));
        }
        if self.meta.record_count != n {
            return Err(IndexError::Validation(format!(
                "meta record_count {} != docstore length {n}",
                self.meta.record_count
            )));
        }
        if self.dense.dim() != self.meta.dimension {
            return Err(IndexError::Validation(format!(
                "dense dimension {} != meta dimension {}",
                self.dense.dim(),
                self.meta.dimension
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for r in &self.docstore {
            if !seen.insert(r.key()) {
                return Err(IndexError::Validation(format!("duplicate identity {}", r.key())));
            }
        }
        self.lexical.check_consistency()
    }

    pub fn keys(&self) -> impl Iterator<Item = ChunkKey> + '_ {
        self.docstore.iter().map(ChunkRecord::key)
    }

    /// Exact cosine top-`k` over the records passing `filters`.
    pub fn dense_search(&self, query: &Embedding, k: usize, filters: &FilterSet) -> Vec<Hit> {
        self.dense.search(query, k, |doc| filters.matches(&self.docstore[doc]))
    }

    /// BM25 top-`k` over the records passing `filters`.
    pub fn lexical_search(&self, query_tokens: &[String], k: usize, filters: &FilterSet) -> Vec<Hit> {
        self.lexical.search(query_tokens, k, |doc| filters.matches(&self.docstore[doc]))
    }
}

/// Sorts by score descending, lower doc id first on ties, and truncates.
pub(crate) fn top_k(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc)));
    hits.truncate(k);
    hits
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::embed::HashingEmbedder;
    use chrono::TimeZone;

    pub(crate) fn rec(ticket: &str, text: &str, dept: &str) -> ChunkRecord {
        ChunkRecord {
            ticket_id: ticket.into(),
            conversation_id: ticket.into(),
            chunk_id: 0,
            text: text.into(),
            title: String::new(),
            department: dept.into(),
            last_updated: Utc.with_ymd_and_hms(2022, 3, 1, 0, 0, 0).unwrap(),
            source_type: SourceType::Ticket,
            ingest_job_id: "j".into(),
        }
    }

    fn three() -> HybridIndex {
        HybridIndex::build(
            vec![
                rec("1", "the gpu node is down", "systems"),
                rec("2", "disk quota exceeded on home", "storage"),
                rec("3", "install gromacs with gpu support", "applications"),
            ],
            &HashingEmbedder::default(),
            Bm25Params::default(),
        )
    }

    #[test]
    fn empty_corpus_searches_to_nothing() {
        let e = HashingEmbedder::default();
        let idx = HybridIndex::build(vec![], &e, Bm25Params::default());
        idx.validate().unwrap();
        assert!(idx.dense_search(&e.embed("gpu"), 5, &FilterSet::default()).is_empty());
        assert!(idx.lexical_search(&["gpu".into()], 5, &FilterSet::default()).is_empty());
    }

    #[test]
    fn counts_match() {
        let idx = three();
        idx.validate().unwrap();
        assert_eq!(idx.dense.rows(), 3);
        assert_eq!(idx.docstore.len(), 3);
    }

    #[test]
    fn self_similarity_ranks_first() {
        let e = HashingEmbedder::default();
        let idx = three();
        let hits = idx.dense_search(&e.embed("disk quota exceeded on home"), 5, &FilterSet::default());
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].doc, 1);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn filters_apply_before_truncation() {
        let e = HashingEmbedder::default();
        let idx = three();
        let only_storage = FilterSet {
            department: Some("storage".into()),
            ..FilterSet::default()
        };
        let hits = idx.dense_search(&e.embed("gpu node"), 1, &only_storage);
        assert_eq!(hits.iter().map(|h| h.doc).collect::<Vec<_>>(), [1]);
        let none = FilterSet {
            department: Some("accounts".into()),
            ..FilterSet::default()
        };
        assert!(idx.dense_search(&e.embed("gpu node"), 5, &none).is_empty());
        assert!(idx.lexical_search(&["gpu".into()], 5, &none).is_empty());
    }

    #[test]
    fn lexical_basics() {
        let idx = three();
        let hits = idx.lexical_search(&["gromacs".into()], 5, &FilterSet::default());
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc, 2);
        assert!(idx.lexical_search(&["lustre".into()], 5, &FilterSet::default()).is_empty());
    }

    #[test]
    fn date_filter_is_inclusive() {
        let idx = three();
        let ts = Utc.with_ymd_and_hms(2022, 3, 1, 0, 0, 0).unwrap();
        let f = FilterSet {
            date_from: Some(ts),
            date_to: Some(ts),
            ..FilterSet::default()
        };
        assert_eq!(idx.lexical_search(&["gpu".into()], 5, &f).len(), 2);
    }
}
