//! The corpus atom ([`ChunkRecord`]) and its JSONL materialization.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wire format for every timestamp in artifacts: ISO-8601 UTC, second precision.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// The current time truncated to whole seconds.
pub fn now_seconds() -> DateTime<Utc> {
    let now = Utc::now();
    chrono::Timelike::with_nanosecond(&now, 0).unwrap_or(now)
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, chrono::ParseError> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).map(|n| n.and_utc())
}

/// serde adapter for [`TIMESTAMP_FORMAT`].
pub mod timestamp {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw)
            .map_err(|e| serde::de::Error::custom(format!("invalid timestamp {raw:?}: {e}")))
    }
}

/// Optional-timestamp variant of [`timestamp`].
pub mod timestamp_opt {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
        match ts {
            Some(ts) => s.serialize_str(&super::format_timestamp(ts)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DateTime<Utc>>, D::Error> {
        match Option::<String>::deserialize(d)? {
            Some(raw) => super::parse_timestamp(&raw)
                .map(Some)
                .map_err(|e| serde::de::Error::custom(format!("invalid timestamp {raw:?}: {e}"))),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceType {
    Ticket,
    Web,
    Pdf,
    RepoDoc,
}

impl SourceType {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceType::Ticket => "ticket",
            SourceType::Web => "web",
            SourceType::Pdf => "pdf",
            SourceType::RepoDoc => "repo_doc",
        }
    }
}

impl fmt::Display for SourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One indexed text fragment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub ticket_id: String,
    pub conversation_id: String,
    pub chunk_id: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub title: String,
    pub department: String,
    #[serde(with = "timestamp")]
    pub last_updated: DateTime<Utc>,
    pub source_type: SourceType,
    pub ingest_job_id: String,
}

impl ChunkRecord {
    pub fn key(&self) -> ChunkKey {
        ChunkKey {
            ticket_id: self.ticket_id.clone(),
            conversation_id: self.conversation_id.clone(),
            chunk_id: self.chunk_id,
        }
    }
}

/// Identity triple of a chunk; unique across a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkKey {
    pub ticket_id: String,
    pub conversation_id: String,
    pub chunk_id: u32,
}

impl fmt::Display for ChunkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.ticket_id, self.conversation_id, self.chunk_id)
    }
}

/// The closed set of department tags a deployment accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Departments(BTreeSet<String>);

impl Departments {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(names.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Departments {
    fn default() -> Self {
        Self::new(crate::synth::DEFAULT_DEPARTMENTS.iter().copied())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate identity triple {key}")]
    Duplicate { line: usize, key: ChunkKey },
    #[error("conversation ({ticket_id}, {conversation_id}): chunk ids are not a contiguous run starting at 0")]
    NonContiguous {
        ticket_id: String,
        conversation_id: String,
    },
}

const REQUIRED_FIELDS: [&str; 8] = [
    "ticket_id",
    "conversation_id",
    "chunk_id",
    "text",
    "department",
    "last_updated",
    "source_type",
    "ingest_job_id",
];

/// Validation context for parsing.
#[derive(Debug, Clone)]
pub struct CorpusSchema {
    pub departments: Departments,
    /// Records stamped after this instant are rejected.
    pub not_after: DateTime<Utc>,
}

impl CorpusSchema {
    pub fn new(departments: Departments) -> Self {
        Self {
            departments,
            not_after: Utc::now(),
        }
    }

    /// Checks a single record against the per-record invariants.
    pub fn check_record(&self, record: &ChunkRecord) -> Result<(), String> {
        if record.text.trim().is_empty() {
            return Err("empty text".into());
        }
        for (name, value) in [
            ("ticket_id", &record.ticket_id),
            ("conversation_id", &record.conversation_id),
        ] {
            if value.is_empty() {
                return Err(format!("empty field {name}"));
            }
        }
        if !self.departments.contains(&record.department) {
            return Err(format!("unknown department {:?}", record.department));
        }
        if record.last_updated > self.not_after {
            return Err(format!(
                "last_updated {} is in the future",
                format_timestamp(&record.last_updated)
            ));
        }
        Ok(())
    }
}

/// An ordered set of chunk records, one JSON object per line on disk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusFile {
    pub records: Vec<ChunkRecord>,
}

impl CorpusFile {
    pub fn new(records: Vec<ChunkRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ChunkRecord> {
        self.records.iter()
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_jsonl(&self.records, out)
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

impl IntoIterator for CorpusFile {
    type Item = ChunkRecord;
    type IntoIter = std::vec::IntoIter<ChunkRecord>;
    fn into_iter(self) -> Self::IntoIter {
        self.records.into_iter()
    }
}

pub fn write_jsonl<'a, W, I>(records: I, mut out: W) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a ChunkRecord>,
{
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Streaming reader: one line in memory at a time, plus the identity set
/// needed for duplicate detection.
pub struct CorpusReader<'s, R> {
    input: R,
    schema: &'s CorpusSchema,
    line_no: usize,
    buf: String,
    seen: HashSet<ChunkKey>,
    conversations: BTreeMap<(String, String), BTreeSet<u32>>,
}

impl<'s, R: BufRead> CorpusReader<'s, R> {
    pub fn new(input: R, schema: &'s CorpusSchema) -> Self {
        Self {
            input,
            schema,
            line_no: 0,
            buf: String::new(),
            seen: HashSet::new(),
            conversations: BTreeMap::new(),
        }
    }

    fn parse_line(&mut self, line: &str) -> Result<ChunkRecord, CorpusError> {
        let line_no = self.line_no;
        let malformed = |message: String| CorpusError::Malformed { line: line_no, message };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| malformed(format!("invalid json: {e}")))?;
        let object = value
            .as_object()
            .ok_or_else(|| malformed("expected a json object".into()))?;
        if let Some(missing) = REQUIRED_FIELDS.iter().find(|f| !object.contains_key(**f)) {
            return Err(malformed(format!("missing field {missing}")));
        }
        let record: ChunkRecord =
            serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        self.schema.check_record(&record).map_err(malformed)?;
        let key = record.key();
        if !self.seen.insert(key.clone()) {
            return Err(CorpusError::Duplicate { line: line_no, key });
        }
        self.conversations
            .entry((record.ticket_id.clone(), record.conversation_id.clone()))
            .or_default()
            .insert(record.chunk_id);
        Ok(record)
    }

    /// Whole-corpus checks that need every line first.
    pub fn finish(self) -> Result<(), CorpusError> {
        check_contiguous(self.conversations)
    }
}

impl<R: BufRead> Iterator for CorpusReader<'_, R> {
    type Item = Result<ChunkRecord, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            let line = std::mem::take(&mut self.buf);
            let trimmed = line.trim_end_matches(['\n', '\r']);
            if trimmed.trim().is_empty() {
                continue;
            }
            let parsed = self.parse_line(trimmed);
            self.buf = line;
            return Some(parsed);
        }
    }
}

fn check_contiguous(conversations: BTreeMap<(String, String), BTreeSet<u32>>) -> Result<(), CorpusError> {
    for ((ticket_id, conversation_id), ids) in conversations {
        let contiguous = ids.iter().enumerate().all(|(i, id)| *id as usize == i);
        if !contiguous {
            return Err(CorpusError::NonContiguous {
                ticket_id,
                conversation_id,
            });
        }
    }
    Ok(())
}

/// Parses a JSONL corpus, preserving input order.
pub fn parse_corpus<R: BufRead>(input: R, schema: &CorpusSchema) -> Result<CorpusFile, CorpusError> {
    let mut reader = CorpusReader::new(input, schema);
    let mut records = Vec::new();
    for record in reader.by_ref() {
        records.push(record?);
    }
    reader.finish()?;
    Ok(CorpusFile { records })
}

/// Validates an in-memory record set with the same rules as [`parse_corpus`].
pub fn validate_records(records: &[ChunkRecord], schema: &CorpusSchema) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    let mut conversations: BTreeMap<(String, String), BTreeSet<u32>> = BTreeMap::new();
    for (i, record) in records.iter().enumerate() {
        schema
            .check_record(record)
            .map_err(|message| CorpusError::Malformed { line: i + 1, message })?;
        let key = record.key();
        if !seen.insert(key.clone()) {
            return Err(CorpusError::Duplicate { line: i + 1, key });
        }
        conversations
            .entry((record.ticket_id.clone(), record.conversation_id.clone()))
            .or_default()
            .insert(record.chunk_id);
    }
    check_contiguous(conversations)
}

/// A raw, un-normalized message as exported from the ticket system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMessage {
    pub ticket_id: String,
    pub conversation_id: String,
    pub position: u32,
    pub raw_text: String,
    #[serde(with = "timestamp")]
    pub last_updated: DateTime<Utc>,
    pub department: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn schema() -> CorpusSchema {
        CorpusSchema::new(Departments::new(["systems", "applications"]))
    }

    fn record(ticket: &str, chunk: u32) -> ChunkRecord {
        ChunkRecord {
            ticket_id: ticket.into(),
            conversation_id: format!("{ticket}-c"),
            chunk_id: chunk,
            text: format!("text of {ticket} chunk {chunk}"),
            title: String::new(),
            department: "systems".into(),
            last_updated: Utc.with_ymd_and_hms(2020, 5, 1, 12, 0, 0).unwrap(),
            source_type: SourceType::Ticket,
            ingest_job_id: "job-1".into(),
        }
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        let corpus = parse_corpus("".as_bytes(), &schema()).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn three_lines_in_order() {
        let input = CorpusFile::new(vec![record("t2", 0), record("t1", 0), record("t1b", 0)]).to_jsonl();
        let corpus = parse_corpus(input.as_bytes(), &schema()).unwrap();
        let ids: Vec<_> = corpus.iter().map(|r| r.ticket_id.as_str()).collect();
        assert_eq!(ids, ["t2", "t1", "t1b"]);
    }

    #[test]
    fn missing_field_names_line_and_field() {
        let good = serde_json::to_string(&record("t1", 0)).unwrap();
        let mut bad: serde_json::Value = serde_json::to_value(record("t2", 0)).unwrap();
        bad.as_object_mut().unwrap().remove("ticket_id");
        let input = format!("{good}\n{bad}\n{good}\n");
        let err = parse_corpus(input.as_bytes(), &schema()).unwrap_err();
        assert_eq!(err.to_string(), "line 2: missing field ticket_id");
    }

    #[test]
    fn duplicate_triple_is_rejected() {
        let input = CorpusFile::new(vec![record("t1", 0), record("t1", 0)]).to_jsonl();
        let err = parse_corpus(input.as_bytes(), &schema()).unwrap_err();
        assert_eq!(err.to_string(), "line 2: duplicate identity triple (t1, t1-c, 0)");
    }

    #[test]
    fn unknown_department_and_future_timestamp_fail() {
        let mut r = record("t1", 0);
        r.department = "marketing".into();
        let err = parse_corpus(CorpusFile::new(vec![r]).to_jsonl().as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("unknown department"), "{err}");

        let mut r = record("t1", 0);
        r.last_updated = Utc::now() + chrono::Duration::days(3);
        let err = parse_corpus(CorpusFile::new(vec![r]).to_jsonl().as_bytes(), &schema()).unwrap_err();
        assert!(err.to_string().contains("future"), "{err}");
    }

    #[test]
    fn gap_in_chunk_ids_is_rejected() {
        let input = CorpusFile::new(vec![record("t1", 0), record("t1", 2)]).to_jsonl();
        let err = parse_corpus(input.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, CorpusError::NonContiguous { .. }));
    }

    #[test]
    fn timestamp_wire_format() {
        let r = record("t1", 0);
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.contains("\"last_updated\":\"2020-05-01T12:00:00Z\""), "{line}");
        assert!(!line.contains("title"));
        assert!(parse_timestamp("2020-05-01T12:00:00.5Z").is_err());
    }
}
