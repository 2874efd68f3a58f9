use std::sync::Arc;

use chrono::{TimeZone, Utc};
use ticketsearch_core::engine::{
    EngineContext, EngineSettings, EngineSnapshot, SearchError, SearchRequest, RERANK_FALLBACK_WARNING,
};
use ticketsearch_core::index::{Bm25Params, HybridIndex};
use ticketsearch_core::rerank::RerankError;
use ticketsearch_core::{ChunkRecord, CoverageReranker, HashingEmbedder, Reranker, SourceType};

fn record(ticket: &str, chunk: u32, text: &str, dept: &str, day: u32, source: SourceType) -> ChunkRecord {
    ChunkRecord {
        ticket_id: ticket.into(),
        conversation_id: ticket.into(),
        chunk_id: chunk,
        text: text.into(),
        title: String::new(),
        department: dept.into(),
        last_updated: Utc.with_ymd_and_hms(2023, 5, day, 9, 0, 0).unwrap(),
        source_type: source,
        ingest_job_id: "fixture".into(),
    }
}

fn corpus() -> Vec<ChunkRecord> {
    vec![
        record("1001", 0, "The gpu node gpu07 is down after the kernel update", "systems", 1, SourceType::Ticket),
        record("1001", 1, "gpu07 rebooted and the gpu node is back in the queue", "systems", 2, SourceType::Ticket),
        record("1002", 0, "Disk quota exceeded on the home filesystem", "storage", 3, SourceType::Ticket),
        record("1003", 0, "Please install gromacs 2023 with cuda support", "applications", 4, SourceType::Ticket),
        record("1004", 0, "VPN access denied from the guest network", "networking", 5, SourceType::Ticket),
        record("1005", 0, "Password reset for the cluster account", "accounts", 6, SourceType::Ticket),
        record("https://docs.example.org/gpu", 0, "How to request a gpu node with slurm", "systems", 7, SourceType::Web),
    ]
}

fn engine_with(reranker: Arc<dyn Reranker>) -> EngineSnapshot {
    let index = HybridIndex::build(corpus(), &HashingEmbedder::default(), Bm25Params::default());
    let ctx = EngineContext::new(Arc::new(HashingEmbedder::default()), reranker, EngineSettings::default());
    EngineSnapshot::new(index, ctx, 7)
}

fn engine() -> EngineSnapshot {
    engine_with(Arc::new(CoverageReranker))
}

#[test]
fn finds_the_relevant_ticket_once() {
    let r = engine().search(&SearchRequest::new("gpu node down")).unwrap();
    assert_eq!(r.generation, 7);
    assert_eq!(r.results[0].ticket_id, "1001");
    let n = r.results.iter().filter(|x| x.ticket_id == "1001").count();
    assert_eq!(n, 1);
    assert_eq!(r.results[0].link, "https://rt.example.org/Ticket/Display.html?id=1001");
    assert!(r.results.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(r.warning.is_none());
}

#[test]
fn department_filter_restricts_results() {
    let mut req = SearchRequest::new("gpu node");
    req.filters.department = Some("storage".into());
    let r = engine().search(&req).unwrap();
    assert!(r.results.iter().all(|x| x.department == "storage"));
}

#[test]
fn date_filter_is_inclusive() {
    let mut req = SearchRequest::new("quota gromacs vpn password gpu");
    req.filters.date_from = Some(Utc.with_ymd_and_hms(2023, 5, 3, 9, 0, 0).unwrap());
    req.filters.date_to = Some(Utc.with_ymd_and_hms(2023, 5, 4, 9, 0, 0).unwrap());
    let r = engine().search(&req).unwrap();
    let mut ids: Vec<_> = r.results.iter().map(|x| x.ticket_id.as_str()).collect();
    ids.sort();
    assert_eq!(ids, ["1002", "1003"]);
}

#[test]
fn source_type_filter() {
    let mut req = SearchRequest::new("gpu node slurm");
    req.filters.source_types = Some([SourceType::Web].into());
    let r = engine().search(&req).unwrap();
    assert_eq!(r.results.len(), 1);
    assert_eq!(r.results[0].source_type, SourceType::Web);
}

#[test]
fn empty_query_is_rejected() {
    for q in ["", "   ", "\t\n"] {
        assert!(matches!(engine().search(&SearchRequest::new(q)), Err(SearchError::EmptyQuery)));
    }
}

#[test]
fn inverted_date_range_is_rejected() {
    let mut req = SearchRequest::new("gpu");
    req.filters.date_from = Some(Utc.with_ymd_and_hms(2024, 1, 2, 0, 0, 0).unwrap());
    req.filters.date_to = Some(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap());
    assert!(matches!(engine().search(&req), Err(SearchError::Invalid { .. })));
}

#[test]
fn final_k_bounds_results() {
    let mut req = SearchRequest::new("the");
    req.final_k = Some(2);
    assert!(engine().search(&req).unwrap().results.len() <= 2);
    req.final_k = Some(0);
    assert!(engine().search(&req).is_err());
}

struct Broken;

impl Reranker for Broken {
    fn identity(&self) -> String {
        "broken".into()
    }

    fn score(&self, _: &str, _: &str) -> Result<f64, RerankError> {
        Err(RerankError("model not loaded".into()))
    }
}

#[test]
fn reranker_outage_falls_back_to_fused_order() {
    let r = engine_with(Arc::new(Broken)).search(&SearchRequest::new("gpu node down")).unwrap();
    assert_eq!(r.warning.as_deref(), Some(RERANK_FALLBACK_WARNING));
    assert!(!r.results.is_empty());
    assert_eq!(r.results[0].ticket_id, "1001");
}

#[test]
fn spanish_query_reaches_english_ticket() {
    let r = engine().search(&SearchRequest::new("cuota de disco excedida")).unwrap();
    assert_eq!(r.results[0].ticket_id, "1002");
}

#[test]
fn snippet_is_bounded() {
    let r = engine().search(&SearchRequest::new("gromacs")).unwrap();
    assert!(r.results.iter().all(|x| x.snippet.chars().count() <= 300));
}
