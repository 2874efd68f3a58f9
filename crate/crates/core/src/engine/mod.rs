//! Query-time pipeline over one immutable index generation.

mod config;
mod fusion;
mod scoring;

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{AdjustFactors, RetrievalConfig};
pub use fusion::{fuse_wrrf, Channel, Fused, FusionWeights, RankedList};
pub use scoring::{
    adjust_scores, adjustment_factor, effective_pools, fused_order, is_low_density, rerank, rerank_prompts,
    select_candidates, sort_by_adjusted, Candidate, Provenance, QueryFacts,
};

use crate::embed::Embedder;
use crate::index::{indexed_text, DocId, FilterSet, HybridIndex};
use crate::present::{present, to_results, TicketResult};
use crate::query::{
    make_variants, CorpusVocabulary, IntentLexicon, QueryError, QueryVariant, TranslationDictionary, TypoConfig,
    VariantContext, VariantWeights,
};
use crate::rerank::Reranker;
use crate::text::tokenize;

pub const RERANK_FALLBACK_WARNING: &str = "reranker unavailable; results are in fused order";
pub const MAX_FINAL_K: usize = 100;

/// Tunables shared by every snapshot built from one service configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineSettings {
    pub retrieval: RetrievalConfig,
    pub variant_weights: VariantWeights,
    pub typo: TypoConfig,
    pub rt_base_url: String,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            variant_weights: VariantWeights::default(),
            typo: TypoConfig::default(),
            rt_base_url: "https://rt.example.org".into(),
        }
    }
}

/// Generation-independent collaborators of the engine.
#[derive(Clone)]
pub struct EngineContext {
    pub embedder: Arc<dyn Embedder>,
    pub reranker: Arc<dyn Reranker>,
    pub lexicon: Arc<IntentLexicon>,
    pub dictionary: Arc<TranslationDictionary>,
    pub settings: Arc<EngineSettings>,
}

impl EngineContext {
    pub fn new(embedder: Arc<dyn Embedder>, reranker: Arc<dyn Reranker>, settings: EngineSettings) -> Self {
        Self {
            embedder,
            reranker,
            lexicon: Arc::new(IntentLexicon::shipped()),
            dictionary: Arc::new(TranslationDictionary::shipped()),
            settings: Arc::new(settings),
        }
    }
}

impl std::fmt::Debug for EngineContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EngineContext")
            .field("embedder", &self.embedder.identity())
            .field("reranker", &self.reranker.identity())
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchRequest {
    pub query: String,
    pub final_k: Option<usize>,
    pub filters: FilterSet,
}

impl SearchRequest {
    pub fn new(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub variants_ms: f64,
    pub dense_ms: f64,
    pub lexical_ms: f64,
    pub fusion_ms: f64,
    pub rerank_ms: f64,
    pub present_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub results: Vec<TicketResult>,
    pub generation: u64,
    pub timings: Timings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub variants: Vec<QueryVariant>,
    pub overfetch_rounds: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("empty query")]
    EmptyQuery,
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Everything needed to answer queries for one published generation.
#[derive(Debug)]
pub struct EngineSnapshot {
    pub generation: u64,
    pub index: HybridIndex,
    pub vocabulary: CorpusVocabulary,
    pub context: EngineContext,
}

/// Channel rankings and fusion output for one query.
#[derive(Debug, Clone)]
pub struct Retrieval {
    pub variants: Vec<QueryVariant>,
    pub lists: Vec<RankedList>,
    pub fused: Vec<Fused>,
    pub semantic_top: Vec<DocId>,
    pub exact: Vec<DocId>,
}

impl EngineSnapshot {
    pub fn new(index: HybridIndex, context: EngineContext, generation: u64) -> Self {
        let vocabulary = CorpusVocabulary::new(index.lexical.term_frequencies());
        Self {
            generation,
            index,
            vocabulary,
            context,
        }
    }

    pub fn documents(&self) -> usize {
        self.index.len()
    }

    fn settings(&self) -> &EngineSettings {
        &self.context.settings
    }

    pub fn variants(&self, query: &str) -> Result<Vec<QueryVariant>, QueryError> {
        let s = self.settings();
        let ctx = VariantContext {
            vocabulary: &self.vocabulary,
            lexicon: &self.context.lexicon,
            dictionary: &self.context.dictionary,
            weights: s.variant_weights,
            typo: s.typo,
        };
        make_variants(query, &ctx)
    }

    /// Variant generation, both channels per variant, fusion and rescues.
    pub fn retrieve(&self, query: &str, filters: &FilterSet, timings: &mut Timings) -> Result<Retrieval, SearchError> {
        let cfg = &self.settings().retrieval;
        let t = Instant::now();
        let variants = self.variants(query).map_err(|_| SearchError::EmptyQuery)?;
        timings.variants_ms += elapsed_ms(t);

        let (semantic_k, lexical_k) = effective_pools(query, filters, cfg, self.index.len());
        let mut lists = Vec::with_capacity(2 * variants.len());
        for (i, v) in variants.iter().enumerate() {
            let t = Instant::now();
            let hits = self.index.dense_search(&self.context.embedder.embed(&v.text), semantic_k, filters);
            lists.push(RankedList::from_hits(Channel::Semantic, i, v.weight, &hits));
            timings.dense_ms += elapsed_ms(t);

            let t = Instant::now();
            let hits = self.index.lexical_search(&tokenize(&v.text), lexical_k, filters);
            lists.push(RankedList::from_hits(Channel::Lexical, i, v.weight, &hits));
            timings.lexical_ms += elapsed_ms(t);
        }

        let t = Instant::now();
        let fused = fuse_wrrf(&lists, &cfg.fusion_weights());
        let semantic_top: Vec<DocId> = lists[0].docs.iter().copied().take(cfg.semantic_rescue).collect();
        let facts = QueryFacts::new(query, cfg);
        let exact = match facts.tokens.as_slice() {
            [term] if cfg.exact_match_rescue > 0 => self
                .index
                .lexical_search(std::slice::from_ref(term), cfg.exact_match_rescue, filters)
                .into_iter()
                .map(|h| h.doc)
                .collect(),
            _ => Vec::new(),
        };
        timings.fusion_ms += elapsed_ms(t);
        Ok(Retrieval {
            variants,
            lists,
            fused,
            semantic_top,
            exact,
        })
    }

    pub fn search(&self, request: &SearchRequest) -> Result<SearchResponse, SearchError> {
        let query = request.query.trim();
        if query.is_empty() {
            return Err(SearchError::EmptyQuery);
        }
        let filters = &request.filters;
        if let (Some(from), Some(to)) = (filters.date_from, filters.date_to) {
            if from > to {
                return Err(SearchError::Invalid {
                    field: "date_from",
                    message: "date_from must not be after date_to".into(),
                });
            }
        }
        let cfg = &self.settings().retrieval;
        let final_k = request.final_k.unwrap_or(cfg.final_k);
        if final_k == 0 || final_k > MAX_FINAL_K {
            return Err(SearchError::Invalid {
                field: "final_k",
                message: format!("final_k must lie in 1..={MAX_FINAL_K}"),
            });
        }

        let mut timings = Timings::default();
        let retrieval = self.retrieve(query, filters, &mut timings)?;
        let facts = QueryFacts::new(query, cfg);
        let prompts = rerank_prompts(query, retrieval.variants.iter().map(|v| v.text.as_str()));
        let docstore = &self.index.docstore;

        let rerank_cache: RefCell<HashMap<DocId, f64>> = RefCell::new(HashMap::new());
        let fallback = RefCell::new(false);
        let rerank_ms = RefCell::new(0.0);
        let score_window = |window: usize| -> Vec<Candidate> {
            let t = Instant::now();
            let mut candidates = select_candidates(&retrieval.fused, window, &retrieval.semantic_top, &retrieval.exact);
            let mut cache = rerank_cache.borrow_mut();
            let mut fresh: Vec<Candidate> = candidates.iter().filter(|c| !cache.contains_key(&c.doc)).cloned().collect();
            if !*fallback.borrow() && !fresh.is_empty() {
                let ok = rerank(
                    &mut fresh,
                    &prompts,
                    |doc| indexed_text(&docstore[doc]),
                    self.context.reranker.as_ref(),
                );
                if ok {
                    cache.extend(fresh.iter().map(|c| (c.doc, c.rerank)));
                } else {
                    *fallback.borrow_mut() = true;
                }
            }
            if *fallback.borrow() {
                fused_order(&mut candidates);
            } else {
                for c in candidates.iter_mut() {
                    c.rerank = cache[&c.doc];
                }
                adjust_scores(&mut candidates, docstore, &facts, cfg);
            }
            *rerank_ms.borrow_mut() += elapsed_ms(t);
            candidates
        };

        let window = cfg.candidate_window(final_k);
        let initial = score_window(window);
        let rerank_before_present = *rerank_ms.borrow();
        let t = Instant::now();
        let fused_len = retrieval.fused.len();
        let presentation = present(
            initial,
            final_k,
            |doc| docstore[doc].ticket_id.as_str(),
            |round| {
                let previous = window << (round - 1);
                (previous < fused_len).then(|| score_window(window << round))
            },
        );
        let results: Vec<TicketResult> = to_results(&presentation.picks, docstore, &facts.tokens, &self.settings().rt_base_url);
        timings.rerank_ms = *rerank_ms.borrow();
        timings.present_ms = (elapsed_ms(t) - (timings.rerank_ms - rerank_before_present)).max(0.0);

        Ok(SearchResponse {
            results,
            generation: self.generation,
            timings,
            warning: fallback.into_inner().then(|| RERANK_FALLBACK_WARNING.to_string()),
            variants: retrieval.variants,
            overfetch_rounds: presentation.rounds,
        })
    }
}
