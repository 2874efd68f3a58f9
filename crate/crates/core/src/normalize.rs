//! E-mail cleaning and overlapping character-window chunking.
//!
//! Raw ticket messages carry the whole reply chain: every answer quotes the
//! previous ones, and most end in a signature or an institutional banner.
//! [`Normalizer`] strips that noise so each sentence of a thread ends up in
//! the index once; [`chunk_conversation`] then cuts the cleaned thread into
//! bounded windows.

use std::ops::Range;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ChunkRecord, RawMessage, SourceType};

/// Lines introducing a quoted previous message. Everything from such a line
/// to the end of the message is dropped.
pub const DEFAULT_QUOTE_INTROS: &[&str] = &[
    r"^On .{0,200}wrote:$",
    r"^El .{0,200}escribi[oó]:$",
    r"^O .{0,200}escribiu:$",
    r"^-+ ?(Original Message|Mensaje original|Mensaxe orixinal) ?-+$",
];

/// Header lines left behind by forwarded or top-posted replies.
pub const DEFAULT_HEADERS: &[&str] = &[
    r"^(From|To|Cc|Sent|Date|Subject|De|Para|Enviado|Asunto|Fecha|Enviado el):\s",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizerConfig {
    /// Regexes matched against whitespace-normalized lines.
    pub quote_intro_patterns: Vec<String>,
    /// Regexes; matching lines are removed.
    pub header_patterns: Vec<String>,
    /// Literal signature / banner blocks removed wherever they occur.
    pub signature_literals: Vec<String>,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self {
            quote_intro_patterns: DEFAULT_QUOTE_INTROS.iter().map(|s| s.to_string()).collect(),
            header_patterns: DEFAULT_HEADERS.iter().map(|s| s.to_string()).collect(),
            signature_literals: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("invalid pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("invalid chunking policy: {0}")]
    Policy(String),
}

/// Cleaned text plus the number of undecodable byte sequences that were
/// replaced with U+FFFD.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Normalized {
    pub text: String,
    pub replaced: usize,
}

#[derive(Debug, Clone)]
pub struct Normalizer {
    quote_intros: Vec<Regex>,
    headers: Vec<Regex>,
    literals: Vec<String>,
}

fn compile(patterns: &[String]) -> Result<Vec<Regex>, NormalizeError> {
    patterns
        .iter()
        .map(|p| {
            Regex::new(p).map_err(|source| NormalizeError::Pattern {
                pattern: p.clone(),
                source,
            })
        })
        .collect()
}

fn collapse_inline(line: &str) -> String {
    line.split([' ', '\t']).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
}

/// Lossy UTF-8 decoding that counts replaced sequences.
pub fn decode(bytes: &[u8]) -> Normalized {
    let mut text = String::with_capacity(bytes.len());
    let mut replaced = 0;
    for chunk in bytes.utf8_chunks() {
        text.push_str(chunk.valid());
        if !chunk.invalid().is_empty() {
            text.push(char::REPLACEMENT_CHARACTER);
            replaced += 1;
        }
    }
    Normalized { text, replaced }
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::new(&NormalizerConfig::default()).expect("default patterns compile")
    }
}

impl Normalizer {
    pub fn new(config: &NormalizerConfig) -> Result<Self, NormalizeError> {
        let literals = config
            .signature_literals
            .iter()
            .map(|l| {
                l.replace('\r', "")
                    .lines()
                    .map(|line| collapse_inline(line.trim()))
                    .filter(|line| !line.is_empty())
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .filter(|l| !l.is_empty())
            .collect();
        Ok(Self {
            quote_intros: compile(&config.quote_intro_patterns)?,
            headers: compile(&config.header_patterns)?,
            literals,
        })
    }

    pub fn normalize_bytes(&self, raw: &[u8]) -> Normalized {
        let decoded = decode(raw);
        Normalized {
            text: self.normalize(&decoded.text),
            replaced: decoded.replaced,
        }
    }

    pub fn normalize_message(&self, message: &RawMessage) -> String {
        self.normalize(&message.raw_text)
    }

    /// Applies the cleaning pass until the text stops changing, so the result
    /// is a fixed point (`normalize(normalize(x)) == normalize(x)`).
    pub fn normalize(&self, text: &str) -> String {
        let mut current = self.pass(text);
        for _ in 0..8 {
            let next = self.pass(&current);
            if next == current {
                break;
            }
            current = next;
        }
        current
    }

    fn pass(&self, text: &str) -> String {
        let cleaned: String = text
            .chars()
            .filter_map(|c| match c {
                '\r' | '\u{200b}' | '\u{feff}' | '\u{200c}' | '\u{200d}' => None,
                '\u{a0}' => Some(' '),
                '\n' | '\t' => Some(c),
                c if c.is_control() => Some(' '),
                c => Some(c),
            })
            .collect();

        let lines: Vec<String> = cleaned.split('\n').map(|l| collapse_inline(l.trim())).collect();
        let mut joined = lines.join("\n");
        for literal in &self.literals {
            while joined.contains(literal.as_str()) {
                joined = joined.replace(literal.as_str(), "\n");
            }
        }

        let mut kept: Vec<String> = Vec::new();
        for line in joined.split('\n') {
            let line = collapse_inline(line.trim());
            if line == "--" || self.quote_intros.iter().any(|re| re.is_match(&line)) {
                break;
            }
            if line.is_empty() || line.starts_with('>') || self.headers.iter().any(|re| re.is_match(&line)) {
                continue;
            }
            kept.push(line);
        }
        kept.join("\n")
    }
}

/// Window size and overlap, both in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkingPolicy {
    pub max_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkingPolicy {
    fn default() -> Self {
        Self {
            max_chars: 1000,
            overlap_chars: 200,
        }
    }
}

impl ChunkingPolicy {
    pub fn new(max_chars: usize, overlap_chars: usize) -> Result<Self, NormalizeError> {
        let policy = Self {
            max_chars,
            overlap_chars,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), NormalizeError> {
        if self.max_chars == 0 {
            return Err(NormalizeError::Policy("max_chars must be positive".into()));
        }
        if self.overlap_chars >= self.max_chars {
            return Err(NormalizeError::Policy(format!(
                "overlap_chars ({}) must be smaller than max_chars ({})",
                self.overlap_chars, self.max_chars
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.max_chars - self.overlap_chars
    }

    /// Character windows covering `0..len`.
    pub fn spans(&self, len: usize) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = 0;
        while start < len {
            let end = (start + self.max_chars).min(len);
            spans.push(start..end);
            if end == len {
                break;
            }
            start += self.stride();
        }
        spans
    }
}

/// Identity and filtering metadata stamped on every chunk of a conversation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkMeta {
    pub ticket_id: String,
    pub conversation_id: String,
    pub title: String,
    pub department: String,
    pub last_updated: DateTime<Utc>,
    pub source_type: SourceType,
    pub ingest_job_id: String,
}

/// Separator placed between consecutive messages of one conversation.
pub const MESSAGE_SEPARATOR: &str = "\n\n";

/// Joins the cleaned messages and cuts the result into overlapping windows.
/// Empty messages are skipped; windows holding only whitespace are not
/// emitted.
pub fn chunk_conversation(messages: &[String], policy: &ChunkingPolicy, meta: &ChunkMeta) -> Vec<ChunkRecord> {
    let text = messages
        .iter()
        .map(|m| m.trim())
        .filter(|m| !m.is_empty())
        .collect::<Vec<_>>()
        .join(MESSAGE_SEPARATOR);
    let chars: Vec<char> = text.chars().collect();
    policy
        .spans(chars.len())
        .into_iter()
        .map(|span| chars[span].iter().collect::<String>())
        .filter(|window| !window.trim().is_empty())
        .enumerate()
        .map(|(i, window)| ChunkRecord {
            ticket_id: meta.ticket_id.clone(),
            conversation_id: meta.conversation_id.clone(),
            chunk_id: i as u32,
            text: window,
            title: meta.title.clone(),
            department: meta.department.clone(),
            last_updated: meta.last_updated,
            source_type: meta.source_type,
            ingest_job_id: meta.ingest_job_id.clone(),
        })
        .collect()
}

/// Normalizes and chunks every conversation in `messages`. Messages are
/// grouped by (ticket, conversation) in first-seen order and sorted by their
/// position in the thread.
pub fn prepare_tickets(
    normalizer: &Normalizer,
    messages: &[RawMessage],
    policy: &ChunkingPolicy,
    ingest_job_id: &str,
) -> Vec<ChunkRecord> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: std::collections::HashMap<(String, String), Vec<&RawMessage>> = Default::default();
    for m in messages {
        let key = (m.ticket_id.clone(), m.conversation_id.clone());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(m);
    }
    let mut out = Vec::new();
    for key in order {
        let mut thread = groups.remove(&key).unwrap_or_default();
        thread.sort_by_key(|m| m.position);
        let Some(last) = thread.iter().max_by_key(|m| m.last_updated) else {
            continue;
        };
        let meta = ChunkMeta {
            ticket_id: key.0.clone(),
            conversation_id: key.1.clone(),
            title: String::new(),
            department: thread[0].department.clone(),
            last_updated: last.last_updated,
            source_type: SourceType::Ticket,
            ingest_job_id: ingest_job_id.to_string(),
        };
        let cleaned: Vec<String> = thread.iter().map(|m| normalizer.normalize_message(m)).collect();
        out.extend(chunk_conversation(&cleaned, policy, &meta));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn meta() -> ChunkMeta {
        ChunkMeta {
            ticket_id: "t1".into(),
            conversation_id: "t1".into(),
            title: String::new(),
            department: "systems".into(),
            last_updated: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
            source_type: SourceType::Ticket,
            ingest_job_id: "j".into(),
        }
    }

    #[test]
    fn quoted_lines_are_dropped() {
        let n = Normalizer::default();
        assert_eq!(n.normalize("hola\n> previous text\n> more"), "hola");
    }

    #[test]
    fn whitespace_collapses() {
        let n = Normalizer::default();
        assert_eq!(n.normalize("a  \t b\n\n\n\nc"), "a b\nc");
    }

    #[test]
    fn fully_quoted_message_is_empty() {
        let n = Normalizer::default();
        assert_eq!(n.normalize("> all\n>   of it\n  > quoted"), "");
    }

    #[test]
    fn quote_intro_and_signature_truncate() {
        let n = Normalizer::default();
        let raw = "The job now runs.\n\nOn Mon, 3 Feb 2020, Ana wrote:\nunquoted old text\n> quoted";
        assert_eq!(n.normalize(raw), "The job now runs.");
        let raw = "Gracias!\nEl lun, 3 feb 2020, Ana escribió:\nviejo";
        assert_eq!(n.normalize(raw), "Gracias!");
        let raw = "Fixed the quota.\n-- \nJohn Doe\nSystems team";
        assert_eq!(n.normalize(raw), "Fixed the quota.");
    }

    #[test]
    fn headers_and_banners_are_removed() {
        let config = NormalizerConfig {
            signature_literals: vec!["CONFIDENTIALITY NOTICE: this e-mail\nis private.".into()],
            ..NormalizerConfig::default()
        };
        let n = Normalizer::new(&config).unwrap();
        let raw = "From: someone@example.org\nSubject: re: gpu\nThe node is back.\nCONFIDENTIALITY  NOTICE: this e-mail\n  is private.\n";
        assert_eq!(n.normalize(raw), "The node is back.");
    }

    #[test]
    fn undecodable_bytes_are_replaced_and_counted() {
        let n = Normalizer::default();
        let out = n.normalize_bytes(b"caf\xe9 ok \xff\xfe end");
        assert_eq!(out.replaced, 3);
        assert!(out.text.contains('\u{fffd}'));
        assert!(out.text.ends_with("end"));
    }

    #[test]
    fn invalid_pattern_is_reported() {
        let config = NormalizerConfig {
            header_patterns: vec!["(".into()],
            ..NormalizerConfig::default()
        };
        assert!(matches!(Normalizer::new(&config), Err(NormalizeError::Pattern { .. })));
    }

    #[test]
    fn policy_validation() {
        assert!(ChunkingPolicy::new(100, 100).is_err());
        assert!(ChunkingPolicy::new(0, 0).is_err());
        assert!(ChunkingPolicy::new(100, 99).is_ok());
    }

    #[test]
    fn stride_arithmetic() {
        let policy = ChunkingPolicy::new(1000, 200).unwrap();
        assert_eq!(policy.spans(2500), vec![0..1000, 800..1800, 1600..2500]);
        let text: String = (0..2500).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let chunks = chunk_conversation(std::slice::from_ref(&text), &policy, &meta());
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[1].text, text[800..1800]);
        assert_eq!(chunks.iter().map(|c| c.chunk_id).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn short_and_empty_conversations() {
        let policy = ChunkingPolicy::default();
        let text = "x".repeat(500);
        let chunks = chunk_conversation(std::slice::from_ref(&text), &policy, &meta());
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
        assert!(chunk_conversation(&[], &policy, &meta()).is_empty());
        assert!(chunk_conversation(&["".into(), "  ".into()], &policy, &meta()).is_empty());
    }

    #[test]
    fn messages_join_with_blank_line() {
        let chunks = chunk_conversation(&["first".into(), "".into(), "second".into()], &ChunkingPolicy::default(), &meta());
        assert_eq!(chunks[0].text, "first\n\nsecond");
    }

    proptest! {
        #[test]
        fn windows_cover_and_overlap_exactly(len in 0usize..5000, max in 1usize..400, overlap_frac in 0.0f64..1.0) {
            let overlap = ((max as f64) * overlap_frac) as usize % max;
            let policy = ChunkingPolicy::new(max, overlap).unwrap();
            let spans = policy.spans(len);
            if len == 0 {
                prop_assert!(spans.is_empty());
            } else {
                prop_assert_eq!(spans[0].start, 0);
                prop_assert_eq!(spans.last().unwrap().end, len);
                for pair in spans.windows(2) {
                    prop_assert!(pair[0].len() == max);
                    prop_assert_eq!(pair[0].end - pair[1].start, overlap);
                }
                for s in &spans {
                    prop_assert!(s.len() <= max && !s.is_empty());
                }
            }
        }

        #[test]
        fn normalize_is_idempotent(raw in "[a-z >\\-\t\n:]{0,200}") {
            let n = Normalizer::default();
            let once = n.normalize(&raw);
            prop_assert_eq!(n.normalize(&once), once.clone());
        }
    }
}
