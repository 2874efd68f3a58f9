use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fusion::FusionWeights;
use crate::synth::DEFAULT_DEPARTMENTS;

/// Multiplicative score adjustments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjustFactors {
    pub department_hint: f64,
    pub non_ticket_short_query: f64,
    pub low_density: f64,
    pub title_coverage: f64,
    pub exact_single_term: f64,
}

impl Default for AdjustFactors {
    fn default() -> Self {
        Self {
            department_hint: 1.15,
            non_ticket_short_query: 0.85,
            low_density: 0.80,
            title_coverage: 1.10,
            exact_single_term: 1.20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub semantic_k: usize,
    pub lexical_k: usize,
    pub final_k: usize,
    pub rerank_top_n: usize,
    /// Queries with at most this many tokens count as short.
    pub short_query_tokens: usize,
    pub pool_multiplier: usize,
    pub k_rrf: f64,
    pub semantic_weight: f64,
    pub lexical_weight: f64,
    pub semantic_rescue: usize,
    pub exact_match_rescue: usize,
    pub factors: AdjustFactors,
    /// Chunks whose alphanumeric share of characters is below this are low density.
    pub low_density_alnum_ratio: f64,
    /// Chunks with fewer distinct tokens than this are low density.
    pub low_density_min_tokens: usize,
    /// Department -> query tokens that suggest it.
    pub department_aliases: BTreeMap<String, Vec<String>>,
}

fn default_aliases() -> BTreeMap<String, Vec<String>> {
    let extra: &[(&str, &[&str])] = &[
        ("accounts", &["account", "cuenta", "cuentas"]),
        ("applications", &["application", "aplicaciones"]),
        ("networking", &["network", "red", "rede"]),
        ("storage", &["almacenamiento"]),
        ("systems", &["sistemas"]),
    ];
    DEFAULT_DEPARTMENTS
        .iter()
        .map(|d| {
            let mut aliases = vec![d.to_string()];
            if let Some((_, more)) = extra.iter().find(|(name, _)| name == d) {
                aliases.extend(more.iter().map(|s| s.to_string()));
            }
            (d.to_string(), aliases)
        })
        .collect()
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            semantic_k: 50,
            lexical_k: 50,
            final_k: 10,
            rerank_top_n: 30,
            short_query_tokens: 2,
            pool_multiplier: 2,
            k_rrf: 60.0,
            semantic_weight: 0.6,
            lexical_weight: 0.4,
            semantic_rescue: 3,
            exact_match_rescue: 20,
            factors: AdjustFactors::default(),
            low_density_alnum_ratio: 0.4,
            low_density_min_tokens: 5,
            department_aliases: default_aliases(),
        }
    }
}

impl RetrievalConfig {
    pub fn fusion_weights(&self) -> FusionWeights {
        FusionWeights {
            k_rrf: self.k_rrf,
            semantic: self.semantic_weight,
            lexical: self.lexical_weight,
        }
    }

    /// `max(rerank_top_n, 4 * final_k)`
    pub fn candidate_window(&self, final_k: usize) -> usize {
        self.rerank_top_n.max(4 * final_k)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("semantic_k", self.semantic_k),
            ("lexical_k", self.lexical_k),
            ("final_k", self.final_k),
            ("rerank_top_n", self.rerank_top_n),
            ("pool_multiplier", self.pool_multiplier),
        ] {
            if v == 0 {
                return Err(format!("retrieval.{name} must be positive"));
            }
        }
        if self.rerank_top_n < self.final_k {
            return Err("retrieval.rerank_top_n must be >= retrieval.final_k".into());
        }
        if !(self.k_rrf.is_finite() && self.k_rrf > 0.0) {
            return Err("retrieval.k_rrf must be positive".into());
        }
        for (name, w) in [
            ("semantic_weight", self.semantic_weight),
            ("lexical_weight", self.lexical_weight),
        ] {
            if !(w.is_finite() && w > 0.0) {
                return Err(format!("retrieval.{name} must be positive"));
            }
        }
        let f = &self.factors;
        for (name, v) in [
            ("department_hint", f.department_hint),
            ("non_ticket_short_query", f.non_ticket_short_query),
            ("low_density", f.low_density),
            ("title_coverage", f.title_coverage),
            ("exact_single_term", f.exact_single_term),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("retrieval.factors.{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.low_density_alnum_ratio) {
            return Err("retrieval.low_density_alnum_ratio must lie in [0, 1]".into());
        }
        Ok(())
    }
}
