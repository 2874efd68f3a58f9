//! Weighted query variants: canonical form, single-edit typo repair against
//! the corpus vocabulary, intent expansion and Spanish -> English term
//! translation.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{canonicalize, tokenize};

pub const SHIPPED_LEXICON: &str = include_str!("../data/intents.json");
pub const SHIPPED_DICTIONARY: &str = include_str!("../data/translations.es-en.json");

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("empty query")]
    Empty,
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Original,
    Normalized,
    TypoFixed,
    IntentExpanded,
    Translated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryVariant {
    pub text: String,
    pub kind: VariantKind,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariantWeights {
    pub original: f64,
    pub normalized: f64,
    pub typo_fixed: f64,
    pub intent_expanded: f64,
    pub translated: f64,
}

impl Default for VariantWeights {
    fn default() -> Self {
        Self {
            original: 1.0,
            normalized: 0.9,
            typo_fixed: 0.8,
            intent_expanded: 0.7,
            translated: 0.7,
        }
    }
}

impl VariantWeights {
    pub fn validate(&self) -> Result<(), String> {
        if self.original != 1.0 {
            return Err("variants.weights.original must be 1.0".into());
        }
        for (name, w) in [
            ("normalized", self.normalized),
            ("typo_fixed", self.typo_fixed),
            ("intent_expanded", self.intent_expanded),
            ("translated", self.translated),
        ] {
            if !(w > 0.0 && w <= 1.0) {
                return Err(format!("variants.weights.{name} must lie in (0, 1], got {w}"));
            }
        }
        Ok(())
    }
}

/// Knobs for typo repair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TypoConfig {
    /// A replacement must occur at least this often in the corpus.
    pub min_frequency: u64,
    /// Shorter tokens are never repaired.
    pub min_token_len: usize,
}

impl Default for TypoConfig {
    fn default() -> Self {
        Self {
            min_frequency: 5,
            min_token_len: 4,
        }
    }
}

/// Intent classes in match priority order.
pub const INTENT_CLASSES: [&str; 4] = ["definition", "installation", "containers", "error_troubleshooting"];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntent {
    triggers: Vec<String>,
    expansions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentClass {
    pub name: String,
    triggers: Vec<Vec<String>>,
    pub expansions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentLexicon {
    classes: Vec<IntentClass>,
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

impl IntentLexicon {
    pub fn from_json(json: &str) -> Result<Self, QueryError> {
        let invalid = |message: String| QueryError::Invalid {
            what: "intent lexicon",
            message,
        };
        let mut raw: HashMap<String, RawIntent> = serde_json::from_str(json).map_err(|e| invalid(e.to_string()))?;
        let mut classes = Vec::new();
        for name in INTENT_CLASSES {
            let intent = raw
                .remove(name)
                .ok_or_else(|| invalid(format!("missing class {name}")))?;
            let triggers: Vec<Vec<String>> = intent
                .triggers
                .iter()
                .map(|t| tokenize(&canonicalize(t)))
                .filter(|t| !t.is_empty())
                .collect();
            let expansions: Vec<String> = intent.expansions.iter().map(|e| canonicalize(e)).filter(|e| !e.is_empty()).collect();
            if triggers.is_empty() || expansions.is_empty() {
                return Err(invalid(format!("class {name} needs triggers and expansions")));
            }
            classes.push(IntentClass {
                name: name.to_string(),
                triggers,
                expansions,
            });
        }
        if let Some(extra) = raw.keys().next() {
            return Err(invalid(format!("unknown class {extra}")));
        }
        Ok(Self { classes })
    }

    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_LEXICON).expect("shipped lexicon is valid")
    }

    pub fn load(path: &Path) -> Result<Self, QueryError> {
        Self::from_json(&read(path)?)
    }

    /// First class (in [`INTENT_CLASSES`] order) with a trigger in `tokens`.
    pub fn detect(&self, tokens: &[String]) -> Option<&IntentClass> {
        self.classes
            .iter()
            .find(|c| c.triggers.iter().any(|t| contains_phrase(tokens, t)))
    }

    pub fn class(&self, name: &str) -> Option<&IntentClass> {
        self.classes.iter().find(|c| c.name == name)
    }
}

impl IntentClass {
    pub fn has_trigger(&self, phrase: &str) -> bool {
        let tokens = tokenize(&canonicalize(phrase));
        self.triggers.contains(&tokens)
    }
}

fn read(path: &Path) -> Result<String, QueryError> {
    std::fs::read_to_string(path).map_err(|source| QueryError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Curated Spanish -> English terms; keys may be multi-word phrases.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationDictionary {
    /// Canonical key tokens -> replacement, longest keys first.
    entries: Vec<(Vec<String>, String)>,
}

impl TranslationDictionary {
    pub fn from_json(json: &str) -> Result<Self, QueryError> {
        let raw: BTreeMap<String, String> = serde_json::from_str(json).map_err(|e| QueryError::Invalid {
            what: "translation dictionary",
            message: e.to_string(),
        })?;
        Ok(Self::from_pairs(raw))
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut entries: Vec<(Vec<String>, String)> = pairs
            .into_iter()
            .map(|(k, v)| (tokenize(&canonicalize(k.as_ref())), canonicalize(v.as_ref())))
            .filter(|(k, v)| !k.is_empty() && !v.is_empty())
            .collect();
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_DICTIONARY).expect("shipped dictionary is valid")
    }

    pub fn load(path: &Path) -> Result<Self, QueryError> {
        Self::from_json(&read(path)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replaces every key occurrence (longest match first, left to right).
    /// Returns `None` when nothing was replaced.
    pub fn translate(&self, tokens: &[String]) -> Option<String> {
        let mut out: Vec<&str> = Vec::with_capacity(tokens.len());
        let mut replaced = false;
        let mut i = 0;
        while i < tokens.len() {
            let hit = self
                .entries
                .iter()
                .find(|(key, _)| tokens[i..].starts_with(key));
            match hit {
                Some((key, value)) => {
                    out.push(value);
                    i += key.len();
                    replaced = true;
                }
                None => {
                    out.push(&tokens[i]);
                    i += 1;
                }
            }
        }
        replaced.then(|| out.join(" "))
    }
}

/// Token frequencies of the indexed corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusVocabulary {
    freq: HashMap<String, u64>,
    by_len: BTreeMap<usize, Vec<String>>,
}

impl CorpusVocabulary {
    pub fn new(freq: HashMap<String, u64>) -> Self {
        let mut by_len: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for token in freq.keys() {
            by_len.entry(token.chars().count()).or_default().push(token.clone());
        }
        for tokens in by_len.values_mut() {
            tokens.sort();
        }
        Self { freq, by_len }
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut freq = HashMap::new();
        for t in texts {
            for token in tokenize(t) {
                *freq.entry(token).or_insert(0) += 1;
            }
        }
        Self::new(freq)
    }

    pub fn frequency(&self, token: &str) -> u64 {
        self.freq.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.freq.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    /// Most frequent token at edit distance exactly one with frequency at
    /// least `min_frequency`; ties go to the lexicographically smaller token.
    pub fn correction(&self, token: &str, min_frequency: u64) -> Option<&str> {
        let len = token.chars().count();
        let mut best: Option<(&str, u64)> = None;
        for l in len.saturating_sub(1)..=len + 1 {
            for candidate in self.by_len.get(&l).into_iter().flatten() {
                let f = self.freq[candidate];
                if f < min_frequency || !is_one_edit(token, candidate) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((b, bf)) => f > bf || (f == bf && candidate.as_str() < b),
                };
                if better {
                    best = Some((candidate, f));
                }
            }
        }
        best.map(|(t, _)| t)
    }
}

/// Levenshtein distance exactly 1 (one insertion, deletion or substitution).
pub fn is_one_edit(a: &str, b: &str) -> bool {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    match long.len() - short.len() {
        0 => short.iter().zip(long.iter()).filter(|(x, y)| x != y).count() == 1,
        1 => {
            let prefix = short.iter().zip(long.iter()).take_while(|(x, y)| x == y).count();
            short[prefix..] == long[prefix + 1..]
        }
        _ => false,
    }
}

/// Everything [`make_variants`] needs besides the query.
#[derive(Debug, Clone)]
pub struct VariantContext<'a> {
    pub vocabulary: &'a CorpusVocabulary,
    pub lexicon: &'a IntentLexicon,
    pub dictionary: &'a TranslationDictionary,
    pub weights: VariantWeights,
    pub typo: TypoConfig,
}

/// Repairs out-of-vocabulary tokens; `None` when nothing changed.
pub fn repair_typos(tokens: &[String], vocab: &CorpusVocabulary, typo: &TypoConfig) -> Option<String> {
    let mut changed = false;
    let repaired: Vec<&str> = tokens
        .iter()
        .map(|t| {
            if vocab.contains(t) || t.chars().count() < typo.min_token_len {
                return t.as_str();
            }
            match vocab.correction(t, typo.min_frequency) {
                Some(fix) => {
                    changed = true;
                    fix
                }
                None => t.as_str(),
            }
        })
        .collect();
    changed.then(|| repaired.join(" "))
}

/// Original query first (weight 1.0), then the applicable rewrites.
/// Variants with identical text are merged, keeping the larger weight.
pub fn make_variants(query: &str, ctx: &VariantContext<'_>) -> Result<Vec<QueryVariant>, QueryError> {
    let original = query.trim();
    if original.is_empty() {
        return Err(QueryError::Empty);
    }
    let w = ctx.weights;
    let mut variants = vec![QueryVariant {
        text: original.to_string(),
        kind: VariantKind::Original,
        weight: w.original,
    }];
    let mut push = |text: String, kind: VariantKind, weight: f64| {
        if text.is_empty() {
            return;
        }
        match variants.iter_mut().find(|v| v.text == text) {
            Some(existing) => existing.weight = existing.weight.max(weight),
            None => variants.push(QueryVariant { text, kind, weight }),
        }
    };

    let normalized = canonicalize(original);
    let tokens = tokenize(&normalized);
    push(normalized.clone(), VariantKind::Normalized, w.normalized);
    if let Some(fixed) = repair_typos(&tokens, ctx.vocabulary, &ctx.typo) {
        push(fixed, VariantKind::TypoFixed, w.typo_fixed);
    }
    if let Some(intent) = ctx.lexicon.detect(&tokens) {
        let expanded = format!("{normalized} {}", intent.expansions.join(" "));
        push(expanded, VariantKind::IntentExpanded, w.intent_expanded);
    }
    if let Some(translated) = ctx.dictionary.translate(&tokens) {
        push(translated, VariantKind::Translated, w.translated);
    }
    Ok(variants)
}
