use std::collections::HashMap;
use std::io::BufRead;
use std::path::PathBuf;

use chrono::{DateTime, Utc};

use super::IngestError;
use crate::corpus::RawMessage;
use crate::synth::{generate_raw_messages, SynthSpec};

/// Incremental export of the ticket system.
pub trait TicketSource: Send + Sync {
    /// Every message of every ticket whose latest update lies in
    /// `[from, to]` (both inclusive).
    fn fetch(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> Result<Vec<RawMessage>, IngestError>;
}

/// Keeps whole tickets whose latest message timestamp falls in the window.
pub fn tickets_in_window(messages: Vec<RawMessage>, from: DateTime<Utc>, to: DateTime<Utc>) -> Vec<RawMessage> {
    let mut latest: HashMap<String, DateTime<Utc>> = HashMap::new();
    for m in &messages {
        let e = latest.entry(m.ticket_id.clone()).or_insert(m.last_updated);
        *e = (*e).max(m.last_updated);
    }
    messages
        .into_iter()
        .filter(|m| {
            let ts = latest[&m.ticket_id];
            from <= ts && ts <= to
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    pub messages: Vec<RawMessage>,
}

impl MemorySource {
    pub fn new(messages: Vec<RawMessage>) -> Self {
        Self { messages }
    }
}

impl TicketSource for MemorySource {
    fn fetch(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> Result<Vec<RawMessage>, IngestError> {
        Ok(tickets_in_window(self.messages.clone(), from, to))
    }
}

/// A JSONL file of [`RawMessage`]s.
#[derive(Debug, Clone)]
pub struct JsonlSource {
    pub path: PathBuf,
}

impl TicketSource for JsonlSource {
    fn fetch(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> Result<Vec<RawMessage>, IngestError> {
        let file = std::fs::File::open(&self.path).map_err(|e| IngestError::io(&self.path, e))?;
        let mut messages = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| IngestError::io(&self.path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let m: RawMessage = serde_json::from_str(&line).map_err(|e| IngestError::Stage {
                stage: "fetch".into(),
                message: format!("{}: line {}: {e}", self.path.display(), i + 1),
            })?;
            messages.push(m);
        }
        Ok(tickets_in_window(messages, from, to))
    }
}

/// The synthetic generator as a source.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub spec: SynthSpec,
}

impl TicketSource for SyntheticSource {
    fn fetch(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> Result<Vec<RawMessage>, IngestError> {
        Ok(tickets_in_window(generate_raw_messages(&self.spec), from, to))
    }
}
