//! Declarative service configuration (`config/rag.yaml`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ticketsearch_core::engine::{EngineSettings, RetrievalConfig};
use ticketsearch_core::index::{Bm25Params, DEFAULT_BACKUP_RETENTION};
use ticketsearch_core::ingest::{OffloadSettings, ReleasePolicy};
use ticketsearch_core::normalize::{ChunkingPolicy, Normalizer, NormalizerConfig};
use ticketsearch_core::query::{TypoConfig, VariantWeights};
use ticketsearch_core::synth::DEFAULT_DEPARTMENTS;
use ticketsearch_core::Departments;

pub const DEFAULT_CONFIG_PATH: &str = "config/rag.yaml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub departments: Vec<String>,
    pub storage: StorageConfig,
    pub retrieval: RetrievalConfig,
    pub chunking: ChunkingPolicy,
    pub bm25: Bm25Params,
    pub variants: VariantsConfig,
    pub ingestion: IngestionConfig,
    pub normalizer: NormalizerConfig,
    pub server: ServerConfig,
    pub offload: OffloadSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            departments: DEFAULT_DEPARTMENTS.iter().map(|s| s.to_string()).collect(),
            storage: StorageConfig::default(),
            retrieval: RetrievalConfig::default(),
            chunking: ChunkingPolicy::default(),
            bm25: Bm25Params::default(),
            variants: VariantsConfig::default(),
            ingestion: IngestionConfig::default(),
            normalizer: NormalizerConfig::default(),
            server: ServerConfig::default(),
            offload: OffloadSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorageConfig {
    /// Holds `index/`, `jobs/`, `data/` and `state/`.
    pub root: PathBuf,
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self { root: "var".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariantsConfig {
    pub weights: VariantWeights,
    /// Intent lexicon JSON; the shipped lexicon when unset.
    pub lexicon_path: Option<PathBuf>,
    /// Spanish to English dictionary JSON; the shipped one when unset.
    pub dictionary_path: Option<PathBuf>,
    pub typo: TypoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestionConfig {
    pub overlap_hours: u32,
    pub backup_retention: usize,
}

impl Default for IngestionConfig {
    fn default() -> Self {
        Self {
            overlap_hours: 48,
            backup_retention: DEFAULT_BACKUP_RETENTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub bind: String,
    /// Exact-match origin allowlist.
    pub cors_origins: Vec<String>,
    pub rt_base_url: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            cors_origins: vec!["http://localhost:5173".into()],
            rt_base_url: EngineSettings::default().rt_base_url,
        }
    }
}

impl ServiceConfig {
    /// Reads, applies the offload environment overrides, resolves relative
    /// paths against the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_yaml(&text)?;
        config.apply_env(|k| std::env::var(k).ok())?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        serde_yaml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// `OFFLOAD_ENABLED` and `OFFLOAD_RELEASE_POLICY` override the file.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = var("OFFLOAD_ENABLED") {
            self.offload.enabled = match v.trim().to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => true,
                "0" | "false" | "no" | "off" | "" => false,
                other => return Err(ConfigError::Invalid(format!("OFFLOAD_ENABLED: cannot parse {other:?}"))),
            };
        }
        if let Some(v) = var("OFFLOAD_RELEASE_POLICY") {
            self.offload.release_policy = v
                .parse::<ReleasePolicy>()
                .map_err(|e| ConfigError::Invalid(format!("OFFLOAD_RELEASE_POLICY: {e}")))?;
        }
        Ok(())
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.storage.root);
        if let Some(p) = self.variants.lexicon_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.variants.dictionary_path.as_mut() {
            resolve(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        if self.departments.is_empty() {
            return Err(invalid("departments must not be empty".into()));
        }
        if let Some(d) = self.departments.iter().find(|d| d.trim().is_empty() || d.trim() != d.as_str()) {
            return Err(invalid(format!("departments: invalid name {d:?}")));
        }
        self.retrieval.validate().map_err(invalid)?;
        let departments = self.departments();
        if let Some(d) = self.retrieval.department_aliases.keys().find(|d| !departments.contains(d)) {
            return Err(invalid(format!("retrieval.department_aliases: unknown department {d:?}")));
        }
        self.chunking.validate().map_err(|e| invalid(format!("chunking: {e}")))?;
        self.bm25.validate().map_err(invalid)?;
        self.variants.weights.validate().map_err(invalid)?;
        if self.variants.typo.min_frequency == 0 {
            return Err(invalid("variants.typo.min_frequency must be positive".into()));
        }
        if self.ingestion.overlap_hours == 0 {
            return Err(invalid("ingestion.overlap_hours must be positive".into()));
        }
        if self.ingestion.backup_retention == 0 {
            return Err(invalid("ingestion.backup_retention must be at least 1".into()));
        }
        Normalizer::new(&self.normalizer).map_err(|e| invalid(format!("normalizer: {e}")))?;
        self.server
            .bind
            .parse::<std::net::SocketAddr>()
            .map_err(|e| invalid(format!("server.bind: {e}")))?;
        for origin in &self.server.cors_origins {
            let ok = (origin.starts_with("http://") || origin.starts_with("https://"))
                && !origin.ends_with('/')
                && axum::http::HeaderValue::from_str(origin).is_ok();
            if !ok {
                return Err(invalid(format!("server.cors_origins: invalid origin {origin:?}")));
            }
        }
        let url = self.server.rt_base_url.trim_end_matches('/');
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(invalid(format!("server.rt_base_url: not an http(s) URL: {url:?}")));
        }
        Ok(())
    }

    pub fn departments(&self) -> Departments {
        Departments::new(self.departments.iter().cloned())
    }

    pub fn engine_settings(&self) -> EngineSettings {
        EngineSettings {
            retrieval: self.retrieval.clone(),
            variant_weights: self.variants.weights,
            typo: self.variants.typo,
            rt_base_url: self.server.rt_base_url.trim_end_matches('/').to_string(),
        }
    }

    pub fn index_dir(&self) -> PathBuf {
        self.storage.root.join("index")
    }
}
