use std::collections::{BTreeSet, HashMap, HashSet};

use super::config::RetrievalConfig;
use super::fusion::Fused;
use crate::corpus::{ChunkRecord, SourceType};
use crate::index::{DocId, FilterSet};
use crate::rerank::Reranker;
use crate::text::folded_tokens;

/// Per-channel pool sizes after short-query and filter widening, capped at
/// the corpus size.
pub fn effective_pools(query: &str, filters: &FilterSet, cfg: &RetrievalConfig, corpus_size: usize) -> (usize, usize) {
    let mut factor = 1usize;
    if folded_tokens(query).len() <= cfg.short_query_tokens {
        factor = factor.saturating_mul(cfg.pool_multiplier);
    }
    if filters.is_temporal() {
        factor = factor.saturating_mul(cfg.pool_multiplier);
    }
    if filters.is_department() {
        factor = factor.saturating_mul(cfg.pool_multiplier);
    }
    let widen = |k: usize| k.saturating_mul(factor).min(corpus_size);
    (widen(cfg.semantic_k), widen(cfg.lexical_k))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    /// Ranked lists (by index) that contained the document.
    pub lists: Vec<usize>,
    pub semantic_rescue: bool,
    pub exact_rescue: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub doc: DocId,
    pub fused: f64,
    pub rerank: f64,
    pub adjusted: f64,
    pub provenance: Provenance,
}

impl Candidate {
    fn new(doc: DocId, fused: f64, lists: Vec<usize>) -> Self {
        Self {
            doc,
            fused,
            rerank: 0.0,
            adjusted: 0.0,
            provenance: Provenance {
                lists,
                ..Provenance::default()
            },
        }
    }
}

/// The first `window` fused documents, then any `semantic_top` and `exact`
/// documents not already taken (in that order). Rescued documents keep their
/// fused score when they were fused at all.
pub fn select_candidates(fused: &[Fused], window: usize, semantic_top: &[DocId], exact: &[DocId]) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = fused
        .iter()
        .take(window)
        .map(|f| Candidate::new(f.doc, f.score, f.sources.clone()))
        .collect();
    let base = out.len();
    let mut taken: HashMap<DocId, usize> = out.iter().enumerate().map(|(i, c)| (c.doc, i)).collect();
    let fused_at: HashMap<DocId, &Fused> = fused.iter().map(|f| (f.doc, f)).collect();
    for (docs, semantic) in [(semantic_top, true), (exact, false)] {
        for &doc in docs {
            let i = *taken.entry(doc).or_insert_with(|| {
                let (score, lists) = fused_at.get(&doc).map_or((0.0, Vec::new()), |f| (f.score, f.sources.clone()));
                out.push(Candidate::new(doc, score, lists));
                out.len() - 1
            });
            let p = &mut out[i].provenance;
            if semantic {
                p.semantic_rescue |= i >= base;
            } else {
                p.exact_rescue |= i >= base;
            }
        }
    }
    out
}

/// Capitalizes the first letter of every whitespace-separated word.
fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut chars = w.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Original, lowercased and title-cased query followed by the variant texts,
/// without repeats.
pub fn rerank_prompts<'a>(query: &str, variants: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let query = query.trim();
    let mut prompts: Vec<String> = Vec::new();
    let candidates = [query.to_string(), query.to_lowercase(), title_case(query)]
        .into_iter()
        .chain(variants.into_iter().map(str::to_string));
    for p in candidates {
        if !p.is_empty() && !prompts.contains(&p) {
            prompts.push(p);
        }
    }
    prompts
}

/// Sets each candidate's rerank score to the best score over `prompts`.
/// Failed pairs are skipped; a candidate whose every pair failed scores 0.
/// Returns `false` when every single pair failed.
pub fn rerank(
    candidates: &mut [Candidate],
    prompts: &[String],
    text_of: impl Fn(DocId) -> String,
    reranker: &dyn Reranker,
) -> bool {
    let mut any_ok = false;
    for c in candidates.iter_mut() {
        let text = text_of(c.doc);
        let best = prompts
            .iter()
            .filter_map(|p| reranker.score(p, &text).ok())
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            any_ok = true;
            c.rerank = best;
        } else {
            c.rerank = 0.0;
        }
    }
    any_ok || candidates.is_empty() || prompts.is_empty()
}

/// Query-level facts the adjustment heuristics look at.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFacts {
    /// Folded query tokens, in order.
    pub tokens: Vec<String>,
    pub short: bool,
    /// Departments whose aliases appear among the query tokens.
    pub hinted_departments: BTreeSet<String>,
}

impl QueryFacts {
    pub fn new(query: &str, cfg: &RetrievalConfig) -> Self {
        let tokens = folded_tokens(query);
        let present: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        let hinted_departments = cfg
            .department_aliases
            .iter()
            .filter(|(_, aliases)| {
                aliases
                    .iter()
                    .flat_map(|a| folded_tokens(a))
                    .any(|a| present.contains(a.as_str()))
            })
            .map(|(d, _)| d.clone())
            .collect();
        Self {
            short: tokens.len() <= cfg.short_query_tokens,
            tokens,
            hinted_departments,
        }
    }
}

pub fn is_low_density(text: &str, cfg: &RetrievalConfig) -> bool {
    let total = text.chars().count();
    let alnum = text.chars().filter(|c| c.is_alphanumeric()).count();
    let ratio = if total == 0 { 0.0 } else { alnum as f64 / total as f64 };
    let unique: HashSet<String> = folded_tokens(text).into_iter().collect();
    ratio < cfg.low_density_alnum_ratio || unique.len() < cfg.low_density_min_tokens
}

/// Product of every heuristic factor that applies to `record`.
pub fn adjustment_factor(record: &ChunkRecord, facts: &QueryFacts, cfg: &RetrievalConfig) -> f64 {
    let f = &cfg.factors;
    let mut factor = 1.0;
    if facts.hinted_departments.contains(&record.department) {
        factor *= f.department_hint;
    }
    if facts.short && record.source_type != SourceType::Ticket {
        factor *= f.non_ticket_short_query;
    }
    if is_low_density(&record.text, cfg) {
        factor *= f.low_density;
    }
    if !record.title.is_empty() && !facts.tokens.is_empty() {
        let title: HashSet<String> = folded_tokens(&record.title).into_iter().collect();
        if facts.tokens.iter().all(|t| title.contains(t)) {
            factor *= f.title_coverage;
        }
    }
    if let [term] = facts.tokens.as_slice() {
        let in_title = folded_tokens(&record.title).contains(term);
        if in_title || folded_tokens(&record.text).contains(term) {
            factor *= f.exact_single_term;
        }
    }
    factor
}

/// `adjusted = rerank * factors`, then sorts by adjusted score. Ties fall
/// back to the fused score and then to the lower document id.
pub fn adjust_scores(candidates: &mut [Candidate], docstore: &[ChunkRecord], facts: &QueryFacts, cfg: &RetrievalConfig) {
    for c in candidates.iter_mut() {
        c.adjusted = c.rerank * adjustment_factor(&docstore[c.doc], facts, cfg);
    }
    sort_by_adjusted(candidates);
}

pub fn sort_by_adjusted(candidates: &mut [Candidate]) {
    candidates.sort_by(|a, b| {
        b.adjusted
            .total_cmp(&a.adjusted)
            .then(b.fused.total_cmp(&a.fused))
            .then(a.doc.cmp(&b.doc))
    });
}

/// Fallback ordering when reranking is unavailable: fused score only.
pub fn fused_order(candidates: &mut [Candidate]) {
    for c in candidates.iter_mut() {
        c.rerank = c.fused;
        c.adjusted = c.fused;
    }
    sort_by_adjusted(candidates);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::tests::rec;
    use crate::rerank::{CoverageReranker, RerankError};
    use chrono::{TimeZone, Utc};

    fn cfg() -> RetrievalConfig {
        RetrievalConfig {
            semantic_k: 20,
            lexical_k: 20,
            ..RetrievalConfig::default()
        }
    }

    #[test]
    fn pools() {
        let c = cfg();
        let none = FilterSet::default();
        assert_eq!(effective_pools("slurm job pending forever", &none, &c, 10_000), (20, 20));
        assert_eq!(effective_pools("slurm", &none, &c, 10_000), (40, 40));
        let both = FilterSet {
            department: Some("systems".into()),
            date_from: Some(Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap()),
            ..FilterSet::default()
        };
        assert_eq!(effective_pools("slurm", &both, &c, 10_000), (160, 160));
        assert_eq!(effective_pools("slurm", &both, &c, 50), (50, 50));
    }

    fn fused(docs: &[DocId]) -> Vec<Fused> {
        docs.iter()
            .enumerate()
            .map(|(i, &doc)| Fused {
                doc,
                score: 1.0 / (i + 1) as f64,
                sources: vec![0],
            })
            .collect()
    }

    #[test]
    fn window_is_max_of_rerank_and_four_final() {
        assert_eq!(cfg().candidate_window(10), 40);
        let f = fused(&(0..600).collect::<Vec<_>>());
        assert_eq!(select_candidates(&f, 40, &[], &[]).len(), 40);
        assert_eq!(select_candidates(&f[..7], 40, &[], &[]).len(), 7);
    }

    #[test]
    fn exact_rescue_injects_deep_document() {
        let f = fused(&(0..600).collect::<Vec<_>>());
        let c = select_candidates(&f, 40, &[0, 1, 2], &[499]);
        assert_eq!(c.len(), 41);
        let rescued = c.iter().find(|c| c.doc == 499).unwrap();
        assert!(rescued.provenance.exact_rescue);
        assert_eq!(rescued.fused, 1.0 / 500.0);
        assert!(!c[0].provenance.semantic_rescue);
        let c = select_candidates(&f[..5], 40, &[900], &[]);
        assert!(c.last().unwrap().provenance.semantic_rescue);
        assert_eq!(c.last().unwrap().fused, 0.0);
    }

    #[test]
    fn prompts() {
        let p = rerank_prompts("gpu NODE", ["gpu node", "gpu nodes"]);
        assert_eq!(p, ["gpu NODE", "gpu node", "Gpu Node", "gpu nodes"]);
    }

    struct Flaky;
    impl Reranker for Flaky {
        fn identity(&self) -> String {
            "flaky".into()
        }
        fn score(&self, prompt: &str, text: &str) -> Result<f64, RerankError> {
            if prompt.contains("boom") {
                Err(RerankError("down".into()))
            } else {
                CoverageReranker.score(prompt, text)
            }
        }
    }

    #[test]
    fn rerank_is_max_over_prompts() {
        let texts = [
            "install python on the cluster",
            "python",
            "nothing relevant here",
            "install",
            "how to install python",
        ];
        let prompts = rerank_prompts("install python", ["install python howto"]);
        let mut c: Vec<Candidate> = (0..5).map(|d| Candidate::new(d, 0.0, vec![])).collect();
        assert!(rerank(&mut c, &prompts, |d| texts[d].to_string(), &CoverageReranker));
        for cand in &c {
            let brute = prompts
                .iter()
                .map(|p| CoverageReranker.score(p, texts[cand.doc]).unwrap())
                .fold(0.0, f64::max);
            assert_eq!(cand.rerank, brute);
        }
        assert_eq!(c[0].rerank, 1.0);

        let mut partial: Vec<Candidate> = (0..2).map(|d| Candidate::new(d, 0.0, vec![])).collect();
        let prompts = vec!["boom".to_string(), "python".to_string()];
        assert!(rerank(&mut partial, &prompts, |d| texts[d].to_string(), &Flaky));
        assert_eq!(partial[1].rerank, 1.0);
        let prompts = vec!["boom".to_string()];
        assert!(!rerank(&mut partial, &prompts, |d| texts[d].to_string(), &Flaky));
    }

    fn dense_text() -> &'static str {
        "the scheduler rejected the job because the partition was full"
    }

    #[test]
    fn no_factor_means_rerank_score() {
        let c = cfg();
        let facts = QueryFacts::new("partition full rejected job", &c);
        let r = rec("1", dense_text(), "storage");
        assert_eq!(adjustment_factor(&r, &facts, &c), 1.0);
    }

    #[test]
    fn factor_products() {
        let c = cfg();
        let facts = QueryFacts::new("systems partition", &c);
        assert!(facts.short);
        let mut r = rec("1", dense_text(), "systems");
        r.source_type = SourceType::Web;
        let f = adjustment_factor(&r, &facts, &c);
        assert!((f - 0.85 * 1.15).abs() < 1e-12);
        assert!((f - 0.9775).abs() < 1e-12);

        let single = QueryFacts::new("scheduler", &c);
        let r = rec("1", dense_text(), "storage");
        assert!((adjustment_factor(&r, &single, &c) - 1.2).abs() < 1e-12);

        let mut titled = rec("1", dense_text(), "storage");
        titled.title = "Partition Full FAQ".into();
        let facts = QueryFacts::new("partition full job", &c);
        assert_eq!(adjustment_factor(&titled, &facts, &c), 1.0);
        let facts = QueryFacts::new("the partition full", &c);
        assert!((adjustment_factor(&titled, &facts, &c) - 1.0).abs() < 1e-12);
        let facts = QueryFacts::new("partition was full", &c);
        assert!((adjustment_factor(&titled, &facts, &c) - 1.0).abs() < 1e-12);
        let facts = QueryFacts::new("full partition faq", &c);
        assert!((adjustment_factor(&titled, &facts, &c) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn low_density_detection() {
        let c = cfg();
        assert!(is_low_density("ok thanks", &c));
        assert!(is_low_density("---- ==== #### ---- a b c d e f", &c));
        assert!(!is_low_density(dense_text(), &c));
    }

    #[test]
    fn scaling_rerank_scores_keeps_ranking() {
        let c = cfg();
        let docstore: Vec<ChunkRecord> = [
            (dense_text(), "systems"),
            ("ok", "storage"),
            ("partition full on the systems queue again today", "storage"),
            ("another sentence about partitions and queues here", "systems"),
        ]
        .iter()
        .enumerate()
        .map(|(i, (t, d))| rec(&i.to_string(), t, d))
        .collect();
        let facts = QueryFacts::new("systems partition", &c);
        let base: Vec<Candidate> = [0.3, 0.9, 0.5, 0.5]
            .iter()
            .enumerate()
            .map(|(d, s)| Candidate {
                rerank: *s,
                ..Candidate::new(d, 0.01 * d as f64, vec![])
            })
            .collect();
        let mut a = base.clone();
        adjust_scores(&mut a, &docstore, &facts, &c);
        for scale in [0.001, 3.0, 1e6] {
            let mut b: Vec<Candidate> = base
                .iter()
                .map(|x| Candidate {
                    rerank: x.rerank * scale,
                    ..x.clone()
                })
                .collect();
            adjust_scores(&mut b, &docstore, &facts, &c);
            assert_eq!(
                a.iter().map(|x| x.doc).collect::<Vec<_>>(),
                b.iter().map(|x| x.doc).collect::<Vec<_>>()
            );
        }
    }
}
