//! Hybrid retrieval over support-ticket history.
//!
//! The crate covers the whole path from raw e-mail threads to ticket-level
//! search results:
//!
//! * [`normalize`] cleans reply chains and cuts conversations into
//!   overlapping chunks ([`corpus::ChunkRecord`]),
//! * [`index`] keeps an exact cosine index, a BM25 index and the docstore as
//!   one on-disk artifact that grows by atomic promotion,
//! * [`query`] rewrites the user query into weighted variants,
//! * [`engine`] fuses per-variant dense and lexical rankings with weighted
//!   reciprocal rank fusion, reranks and applies domain adjustments,
//! * [`present`] collapses chunks into tickets,
//! * [`ingest`] runs ingestion jobs, hot-swaps the engine and advances the
//!   ingestion watermark transactionally.

pub mod corpus;
pub mod embed;
pub mod engine;
pub mod index;
pub mod ingest;
pub mod normalize;
pub mod present;
pub mod query;
pub mod rerank;
pub mod synth;
pub mod text;

pub use corpus::{ChunkKey, ChunkRecord, CorpusFile, Departments, SourceType};
pub use embed::{Embedder, Embedding, HashingEmbedder};
pub use rerank::{CoverageReranker, Reranker};
