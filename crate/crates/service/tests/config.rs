use std::path::Path;

use ticketsearch_core::ingest::ReleasePolicy;
use ticketsearch_service::config::{ConfigError, ServiceConfig};

fn repo_config() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/rag.yaml")
}

#[test]
fn shipped_config_loads_and_matches_defaults() {
    let config = ServiceConfig::load(&repo_config()).unwrap();
    let defaults = ServiceConfig::default();
    assert_eq!(config.retrieval, defaults.retrieval);
    assert_eq!(config.bm25, defaults.bm25);
    assert_eq!(config.chunking, defaults.chunking);
    assert_eq!(config.variants.weights, defaults.variants.weights);
    assert_eq!(config.variants.typo, defaults.variants.typo);
    assert_eq!(config.ingestion, defaults.ingestion);
    assert_eq!(config.normalizer.quote_intro_patterns, defaults.normalizer.quote_intro_patterns);
    assert!(config.variants.lexicon_path.as_ref().unwrap().is_file());
    assert!(config.variants.dictionary_path.as_ref().unwrap().is_file());
    assert!(config.storage.root.is_absolute() || config.storage.root.starts_with(repo_config().parent().unwrap()));
    ticketsearch_service::app::engine_context(&config).unwrap();
}

#[test]
fn unknown_keys_are_rejected() {
    for yaml in ["retrieval:\n  semantic_kk: 3\n", "bogus: 1\n", "server:\n  port: 80\n"] {
        assert!(matches!(ServiceConfig::from_yaml(yaml), Err(ConfigError::Parse(_))), "{yaml}");
    }
}

#[test]
fn partial_files_fill_in_defaults() {
    let c = ServiceConfig::from_yaml("bm25:\n  k1: 1.2\n  b: 0.5\n").unwrap();
    assert_eq!(c.bm25.k1, 1.2);
    assert_eq!(c.retrieval, ServiceConfig::default().retrieval);
    c.validate().unwrap();
}

#[test]
fn module_constraints_are_revalidated() {
    let cases = [
        "chunking:\n  max_chars: 100\n  overlap_chars: 100\n",
        "bm25:\n  k1: 1.5\n  b: 2.0\n",
        "retrieval:\n  final_k: 0\n",
        "variants:\n  weights:\n    original: 0.5\n",
        "departments: []\n",
        "retrieval:\n  department_aliases:\n    astrology: [stars]\n",
        "server:\n  cors_origins: ['*']\n",
        "server:\n  bind: not-an-address\n",
        "normalizer:\n  quote_intro_patterns: ['(']\n",
        "ingestion:\n  backup_retention: 0\n",
    ];
    for yaml in cases {
        let c = ServiceConfig::from_yaml(yaml).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))), "{yaml}");
    }
}

#[test]
fn environment_overrides_offload_only() {
    let mut c = ServiceConfig::default();
    c.apply_env(|k| match k {
        "OFFLOAD_ENABLED" => Some("true".into()),
        "OFFLOAD_RELEASE_POLICY" => Some("explicit_cancel".into()),
        _ => None,
    })
    .unwrap();
    assert!(c.offload.enabled);
    assert_eq!(c.offload.release_policy, ReleasePolicy::ExplicitCancel);

    let mut c = ServiceConfig::default();
    assert!(c.apply_env(|k| (k == "OFFLOAD_ENABLED").then(|| "maybe".into())).is_err());
    assert!(c.apply_env(|k| (k == "OFFLOAD_RELEASE_POLICY").then(|| "never".into())).is_err());
}

#[test]
fn relative_paths_resolve_against_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rag.yaml");
    std::fs::write(&path, "storage:\n  root: state\n").unwrap();
    let c = ServiceConfig::load(&path).unwrap();
    assert_eq!(c.storage.root, dir.path().join("state"));
}
