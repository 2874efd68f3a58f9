use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::manifest::write_atomic;
use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Watermark {
    #[serde(with = "crate::corpus::timestamp")]
    pub timestamp: DateTime<Utc>,
}

/// The `{timestamp}` file marking the end of the last confirmed window.
#[derive(Debug, Clone)]
pub struct WatermarkFile {
    path: PathBuf,
}

impl WatermarkFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// `None` before the first successful cycle.
    pub fn read(&self) -> Result<Option<DateTime<Utc>>, IngestError> {
        match fs::read(&self.path) {
            Ok(bytes) => serde_json::from_slice::<Watermark>(&bytes)
                .map(|w| Some(w.timestamp))
                .map_err(|e| IngestError::CorruptManifest {
                    path: self.path.clone(),
                    message: e.to_string(),
                }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(IngestError::io(&self.path, e)),
        }
    }

    /// Persists `ts`; refuses to move backwards.
    pub fn advance(&self, ts: DateTime<Utc>) -> Result<(), IngestError> {
        if let Some(current) = self.read()? {
            if ts < current {
                return Err(IngestError::Validation {
                    field: "now".into(),
                    message: format!(
                        "watermark would move backwards from {}",
                        crate::corpus::format_timestamp(&current)
                    ),
                });
            }
        }
        let bytes = serde_json::to_vec(&Watermark { timestamp: ts }).expect("watermark serializes");
        write_atomic(&self.path, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn never_moves_backwards() {
        let dir = tempfile::tempdir().unwrap();
        let w = WatermarkFile::new(dir.path().join("watermark.json"));
        assert_eq!(w.read().unwrap(), None);
        let t1 = Utc.with_ymd_and_hms(2024, 5, 1, 0, 0, 0).unwrap();
        w.advance(t1).unwrap();
        assert_eq!(w.read().unwrap(), Some(t1));
        assert!(w.advance(t1 - chrono::Duration::seconds(1)).is_err());
        assert_eq!(w.read().unwrap(), Some(t1));
        assert_eq!(fs::read_to_string(w.path()).unwrap(), r#"{"timestamp":"2024-05-01T00:00:00Z"}"#);
    }
}
