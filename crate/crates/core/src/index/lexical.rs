use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{top_k, DocId, Hit, IndexError};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(format!("bm25.k1 must be a non-negative number, got {}", self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(format!("bm25.b must lie in [0, 1], got {}", self.b));
        }
        Ok(())
    }
}

/// Okapi BM25 inverted index.
#[derive(Debug, Clone, PartialEq)]
pub struct LexicalIndex {
    params: Bm25Params,
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_lens: Vec<u32>,
    avgdl: f64,
}

#[derive(Serialize, Deserialize)]
struct StoredLexical {
    k1: f64,
    b: f64,
    doc_lens: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl LexicalIndex {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>, params: Bm25Params) -> Self {
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_lens = Vec::new();
        for (doc, text) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            doc_lens.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((doc as u32, count));
            }
        }
        Self::from_parts(params, postings, doc_lens)
    }

    fn from_parts(params: Bm25Params, postings: HashMap<String, Vec<(u32, u32)>>, doc_lens: Vec<u32>) -> Self {
        let total: u64 = doc_lens.iter().map(|l| u64::from(*l)).sum();
        let avgdl = if doc_lens.is_empty() {
            0.0
        } else {
            total as f64 / doc_lens.len() as f64
        };
        Self {
            params,
            postings,
            doc_lens,
            avgdl,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lens.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, doc: DocId) -> u32 {
        self.doc_lens[doc]
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Documents containing `term`, ascending.
    pub fn docs_with(&self, term: &str) -> impl Iterator<Item = DocId> + '_ {
        self.postings
            .get(term)
            .into_iter()
            .flat_map(|p| p.iter().map(|(d, _)| *d as DocId))
    }

    /// Token -> total occurrences across the corpus.
    pub fn term_frequencies(&self) -> HashMap<String, u64> {
        self.postings
            .iter()
            .map(|(t, p)| (t.clone(), p.iter().map(|(_, tf)| u64::from(*tf)).sum()))
            .collect()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 over the distinct query tokens, in first-occurrence order.
    pub fn search(&self, query_tokens: &[String], k: usize, keep: impl Fn(DocId) -> bool) -> Vec<Hit> {
        if k == 0 || self.doc_lens.is_empty() {
            return Vec::new();
        }
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<DocId, f64> = HashMap::new();
        let mut seen = std::collections::HashSet::new();
        for term in query_tokens {
            if !seen.insert(term.as_str()) {
                continue;
            }
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(doc, tf) in list {
                let doc = doc as DocId;
                if !keep(doc) {
                    continue;
                }
                let tf = f64::from(tf);
                let norm = 1.0 - b + b * f64::from(self.doc_lens[doc]) / self.avgdl;
                *scores.entry(doc).or_insert(0.0) += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        let hits = scores
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(doc, score)| Hit { doc, score })
            .collect();
        top_k(hits, k)
    }

    /// Postings agree with document lengths and reference only known docs.
    pub fn check_consistency(&self) -> Result<(), IndexError> {
        let n = self.doc_lens.len();
        let mut lens = vec![0u64; n];
        for (term, list) in &self.postings {
            let mut last: Option<u32> = None;
            for &(doc, tf) in list {
                if doc as usize >= n || tf == 0 || last.is_some_and(|l| l >= doc) {
                    return Err(IndexError::Validation(format!("bad posting list for {term:?}")));
                }
                last = Some(doc);
                lens[doc as usize] += u64::from(tf);
            }
        }
        if lens.iter().zip(&self.doc_lens).any(|(a, b)| *a != u64::from(*b)) {
            return Err(IndexError::Validation(
                "lexical postings disagree with document lengths".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let stored = StoredLexical {
            k1: self.params.k1,
            b: self.params.b,
            doc_lens: self.doc_lens.clone(),
            postings: self.postings.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        };
        serde_json::to_vec(&stored).expect("lexical index serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, IndexError> {
        let stored: StoredLexical =
            serde_json::from_slice(bytes).map_err(|e| IndexError::Corrupt(format!("lexical postings: {e}")))?;
        let index = Self::from_parts(
            Bm25Params {
                k1: stored.k1,
                b: stored.b,
            },
            stored.postings.into_iter().collect(),
            stored.doc_lens,
        );
        index.check_consistency()?;
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        let idx = LexicalIndex::build(["a b b", "b c", ""], Bm25Params::default());
        assert_eq!(idx.doc_count(), 3);
        assert_eq!(idx.doc_freq("b"), 2);
        assert!((idx.avgdl() - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(idx.term_frequencies()["b"], 3);
        assert_eq!(idx.docs_with("b").collect::<Vec<_>>(), [0, 1]);
        idx.check_consistency().unwrap();
    }

    #[test]
    fn json_round_trip() {
        let idx = LexicalIndex::build(["gpu node", "node down now"], Bm25Params { k1: 1.2, b: 0.5 });
        let back = LexicalIndex::from_json(&idx.to_json()).unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn repeated_query_terms_count_once() {
        let idx = LexicalIndex::build(["gpu node", "node"], Bm25Params::default());
        let once = idx.search(&["gpu".into()], 5, |_| true);
        let twice = idx.search(&["gpu".into(), "gpu".into()], 5, |_| true);
        assert_eq!(once, twice);
    }

    #[test]
    fn params_validation() {
        assert!(Bm25Params { k1: -1.0, b: 0.5 }.validate().is_err());
        assert!(Bm25Params { k1: 1.0, b: 1.5 }.validate().is_err());
        Bm25Params::default().validate().unwrap();
    }
}
