use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::manifest::JobKind;
use super::IngestError;
use crate::corpus::{ChunkRecord, Departments, SourceType};
use crate::normalize::{chunk_conversation, ChunkMeta, ChunkingPolicy};

/// A pre-extracted web page, PDF or repository document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentRecord {
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    pub department: String,
    pub text: String,
    #[serde(default, with = "crate::corpus::timestamp_opt", skip_serializing_if = "Option::is_none")]
    pub last_updated: Option<DateTime<Utc>>,
}

impl DocumentRecord {
    /// The url, or the origin when there is no url.
    pub fn document_id(&self) -> Option<&str> {
        self.url
            .as_deref()
            .or(self.origin.as_deref())
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocsRequest {
    pub records: Vec<DocumentRecord>,
}

pub fn source_type_for(kind: JobKind) -> SourceType {
    match kind {
        JobKind::Web => SourceType::Web,
        JobKind::Pdf => SourceType::Pdf,
        JobKind::RepoDocs => SourceType::RepoDoc,
        JobKind::RtWeekly => SourceType::Ticket,
    }
}

fn invalid(field: String, message: impl Into<String>) -> IngestError {
    IngestError::Validation {
        field,
        message: message.into(),
    }
}

impl DocsRequest {
    pub fn validate(&self, departments: &Departments, now: DateTime<Utc>) -> Result<(), IngestError> {
        if self.records.is_empty() {
            return Err(invalid("records".into(), "at least one record is required"));
        }
        let mut ids = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            let field = |name: &str| format!("records[{i}].{name}");
            let Some(id) = r.document_id() else {
                return Err(invalid(field("url"), "url or origin is required"));
            };
            if !ids.insert(id) {
                return Err(invalid(field("url"), format!("duplicate document {id:?}")));
            }
            if !departments.contains(&r.department) {
                return Err(invalid(field("department"), format!("unknown department {:?}", r.department)));
            }
            if clean_document(&r.text).is_empty() {
                return Err(invalid(field("text"), "text is empty"));
            }
            if r.last_updated.is_some_and(|ts| ts > now) {
                return Err(invalid(field("last_updated"), "timestamp is in the future"));
            }
        }
        Ok(())
    }
}

/// Collapses spaces and tabs, trims lines and keeps at most one blank line
/// between paragraphs.
pub fn clean_document(text: &str) -> String {
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.split([' ', '\t', '\r']).filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ");
        if line.is_empty() && out.last().is_none_or(|l| l.is_empty()) {
            continue;
        }
        out.push(line);
    }
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    out.join("\n")
}

/// Chunks each document as a one-message conversation whose ticket and
/// conversation ids are the document id.
pub fn chunk_documents(
    records: &[DocumentRecord],
    kind: JobKind,
    policy: &ChunkingPolicy,
    job_id: &str,
    now: DateTime<Utc>,
) -> Vec<ChunkRecord> {
    let source_type = source_type_for(kind);
    records
        .iter()
        .filter_map(|r| {
            let id = r.document_id()?.to_string();
            let meta = ChunkMeta {
                ticket_id: id.clone(),
                conversation_id: id,
                title: r.title.trim().to_string(),
                department: r.department.clone(),
                last_updated: r.last_updated.unwrap_or(now).with_nanosecond_zero(),
                source_type,
                ingest_job_id: job_id.to_string(),
            };
            Some(chunk_conversation(&[clean_document(&r.text)], policy, &meta))
        })
        .flatten()
        .collect()
}

trait SecondPrecision {
    fn with_nanosecond_zero(self) -> Self;
}

impl SecondPrecision for DateTime<Utc> {
    fn with_nanosecond_zero(self) -> Self {
        chrono::Timelike::with_nanosecond(&self, 0).unwrap_or(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(url: &str, dept: &str, text: &str) -> DocumentRecord {
        DocumentRecord {
            title: "Guide".into(),
            url: Some(url.into()),
            origin: None,
            department: dept.into(),
            text: text.into(),
            last_updated: None,
        }
    }

    #[test]
    fn cleaning() {
        assert_eq!(clean_document("  a \t b \n\n\n\n c \n\n"), "a b\n\nc");
        assert_eq!(clean_document("\n\n"), "");
    }

    #[test]
    fn validation_names_the_field() {
        let d = Departments::default();
        let now = Utc::now();
        let bad = DocsRequest {
            records: vec![doc("u1", "systems", "ok"), doc("u2", "marketing", "x")],
        };
        match bad.validate(&d, now) {
            Err(IngestError::Validation { field, .. }) => assert_eq!(field, "records[1].department"),
            other => panic!("{other:?}"),
        }
        let dup = DocsRequest {
            records: vec![doc("u1", "systems", "ok"), doc("u1", "systems", "x")],
        };
        assert!(dup.validate(&d, now).is_err());
        assert!(DocsRequest { records: vec![] }.validate(&d, now).is_err());
    }

    #[test]
    fn chunks_carry_document_identity() {
        let now = Utc::now();
        let text = "word ".repeat(500);
        let chunks = chunk_documents(
            &[doc("https://x/y", "systems", &text)],
            JobKind::Web,
            &ChunkingPolicy::default(),
            "job",
            now,
        );
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.ticket_id == "https://x/y" && c.conversation_id == "https://x/y"));
        assert!(chunks.iter().all(|c| c.source_type == SourceType::Web && c.title == "Guide"));
        assert_eq!(chunks.iter().map(|c| c.chunk_id).collect::<Vec<_>>(), [0, 1, 2]);
    }
}
