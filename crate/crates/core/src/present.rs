//! Ticket-level results: one hit per ticket, overfetch when deduplication
//! leaves the page short, snippets and deep links.

use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkRecord, SourceType};
use crate::engine::Candidate;
use crate::index::DocId;
use crate::text::{fold, token_spans};

pub const SNIPPET_CHARS: usize = 300;
pub const MAX_OVERFETCH_ROUNDS: usize = 3;
pub const TITLE_SEPARATOR: &str = " \u{2014} ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketResult {
    pub ticket_id: String,
    pub score: f64,
    pub snippet: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub department: String,
    #[serde(with = "crate::corpus::timestamp")]
    pub last_updated: DateTime<Utc>,
    pub source_type: SourceType,
    pub link: String,
}

/// Best chunk of one ticket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub doc: DocId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Presentation {
    pub picks: Vec<Pick>,
    /// Overfetch rounds performed, at most [`MAX_OVERFETCH_ROUNDS`].
    pub rounds: usize,
}

/// First (highest-scored) chunk per ticket, at most `final_k`.
pub fn dedup_tickets<'a>(candidates: &[Candidate], ticket_of: impl Fn(DocId) -> &'a str, final_k: usize) -> Vec<Pick> {
    let mut seen = HashSet::new();
    candidates
        .iter()
        .filter(|c| seen.insert(ticket_of(c.doc)))
        .take(final_k)
        .map(|c| Pick {
            doc: c.doc,
            score: c.adjusted,
        })
        .collect()
}

/// Deduplicates `candidates` (sorted by adjusted score) by ticket. While the
/// page is short, `refetch(round)` is asked for the candidate list of a window
/// twice as large as the previous one; `None` means nothing more is available.
pub fn present<'a>(
    candidates: Vec<Candidate>,
    final_k: usize,
    ticket_of: impl Fn(DocId) -> &'a str + Copy,
    mut refetch: impl FnMut(usize) -> Option<Vec<Candidate>>,
) -> Presentation {
    let mut picks = dedup_tickets(&candidates, ticket_of, final_k);
    let mut rounds = 0;
    while picks.len() < final_k && rounds < MAX_OVERFETCH_ROUNDS {
        rounds += 1;
        match refetch(rounds) {
            Some(more) => picks = dedup_tickets(&more, ticket_of, final_k),
            None => break,
        }
    }
    Presentation { picks, rounds }
}

pub fn ticket_link(rt_base_url: &str, ticket_id: &str) -> String {
    format!("{}/Ticket/Display.html?id={ticket_id}", rt_base_url.trim_end_matches('/'))
}

/// `text` without a leading copy of `title` (compared accent- and
/// case-insensitively, ignoring surrounding whitespace and punctuation).
fn strip_title_prefix<'t>(text: &'t str, title: &str) -> &'t str {
    let title = fold(title.trim());
    if title.is_empty() {
        return text;
    }
    let trimmed = text.trim_start();
    let n = title.chars().count();
    let head: String = trimmed.chars().take(n).collect();
    if fold(&head) != title {
        return text;
    }
    let rest = &trimmed[head.len()..];
    rest.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ':' | '-' | '\u{2014}' | '|'))
}

/// The 300-character window of the chunk text holding the most query-token
/// occurrences (earliest window on ties), prefixed with the title.
pub fn make_snippet(chunk: &ChunkRecord, query_tokens: &[String]) -> String {
    let body = strip_title_prefix(&chunk.text, &chunk.title);
    let body = if body.trim().is_empty() { chunk.text.as_str() } else { body };
    let prefix = if chunk.title.is_empty() {
        String::new()
    } else {
        format!("{}{TITLE_SEPARATOR}", chunk.title.trim())
    };
    let budget = SNIPPET_CHARS.saturating_sub(prefix.chars().count()).max(1);
    let window = best_window(body, query_tokens, budget);
    let snippet = format!("{prefix}{}", window.trim());
    snippet.chars().take(SNIPPET_CHARS).collect()
}

fn best_window(text: &str, query_tokens: &[String], width: usize) -> String {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= width {
        return text.to_string();
    }
    let wanted: HashSet<String> = query_tokens.iter().map(|t| fold(t)).collect();
    let hits: Vec<(usize, usize)> = token_spans(text)
        .into_iter()
        .filter(|s| wanted.contains(&fold(&s.token)))
        .map(|s| (s.start, s.end))
        .collect();
    // windows that can gain or lose a hit start at 0 or right at a hit start
    let mut best_start = 0;
    let mut best_count = hits.iter().filter(|(_, e)| *e <= width).count();
    for &(start, _) in &hits {
        let start = start.min(chars.len() - width);
        let count = hits.iter().filter(|(s, e)| *s >= start && *e <= start + width).count();
        if count > best_count || (count == best_count && start < best_start) {
            best_start = start;
            best_count = count;
        }
    }
    chars[best_start..best_start + width].iter().collect()
}

/// Builds the ticket results for `picks`.
pub fn to_results(picks: &[Pick], docstore: &[ChunkRecord], query_tokens: &[String], rt_base_url: &str) -> Vec<TicketResult> {
    picks
        .iter()
        .map(|p| {
            let r = &docstore[p.doc];
            TicketResult {
                ticket_id: r.ticket_id.clone(),
                score: p.score,
                snippet: make_snippet(r, query_tokens),
                title: (!r.title.is_empty()).then(|| r.title.clone()),
                department: r.department.clone(),
                last_updated: r.last_updated,
                source_type: r.source_type,
                link: ticket_link(rt_base_url, &r.ticket_id),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Provenance;
    use crate::index::tests::rec;

    fn cand(doc: DocId, adjusted: f64) -> Candidate {
        Candidate {
            doc,
            fused: 0.0,
            rerank: adjusted,
            adjusted,
            provenance: Provenance::default(),
        }
    }

    fn stream(n: usize) -> Vec<Candidate> {
        (0..n).map(|d| cand(d, 1.0 - d as f64 * 0.001)).collect()
    }

    #[test]
    fn distinct_tickets_keep_order() {
        let tickets: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let p = present(stream(10), 10, |d| tickets[d].as_str(), |_| None);
        assert_eq!(p.picks.iter().map(|p| p.doc).collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
        assert_eq!(p.rounds, 0);
    }

    #[test]
    fn single_ticket_floor() {
        let p = present(stream(10), 3, |_| "same", |_| None);
        assert_eq!(p.picks.len(), 1);
        assert_eq!(p.rounds, 1);
    }

    #[test]
    fn overfetch_fills_page() {
        // 20 candidates over 5 tickets; the doubled window adds 6 more tickets
        let ticket = |d: DocId| -> String {
            if d < 20 {
                format!("a{}", d % 5)
            } else {
                format!("b{}", d % 6)
            }
        };
        let names: Vec<String> = (0..80).map(ticket).collect();
        let mut calls = 0;
        let p = present(stream(20), 10, |d| names[d].as_str(), |round| {
            calls += 1;
            Some(stream(20 << round))
        });
        assert_eq!(p.picks.len(), 10);
        assert!(p.rounds <= MAX_OVERFETCH_ROUNDS);
        assert_eq!(calls, 1);
        let unique: HashSet<&str> = p.picks.iter().map(|x| names[x.doc].as_str()).collect();
        assert_eq!(unique.len(), 10);
    }

    #[test]
    fn snippet_short_text() {
        let r = rec("1", "short chunk text", "systems");
        assert_eq!(make_snippet(&r, &["chunk".into()]), "short chunk text");
        assert_eq!(ticket_link("https://rt.example.org/", "42"), "https://rt.example.org/Ticket/Display.html?id=42");
    }

    #[test]
    fn snippet_title_not_duplicated() {
        let mut r = rec("doc-1", "GROMACS FAQ\nHow to run gromacs on gpu nodes.", "applications");
        r.title = "GROMACS FAQ".into();
        let s = make_snippet(&r, &["gromacs".into()]);
        assert_eq!(s, "GROMACS FAQ \u{2014} How to run gromacs on gpu nodes.");
        assert_eq!(s.matches("GROMACS FAQ").count(), 1);
    }

    #[test]
    fn snippet_window_follows_query() {
        let mut text = "filler words go here. ".repeat(250);
        text.truncate(5000);
        text.push_str(" the lustre quota is exceeded ");
        text.push_str(&"more filler. ".repeat(40));
        let r = rec("1", &text, "storage");
        let s = make_snippet(&r, &["lustre".into()]);
        assert!(s.chars().count() <= SNIPPET_CHARS);
        assert!(s.contains("lustre"));
    }
}
