//! Text-to-vector interface and the feature-hashing reference embedder.

use xxhash_rust::xxh64::xxh64;

use crate::text::tokenize;

pub const DIMENSION: usize = 384;
pub const DEFAULT_SEED: u64 = 0x5eed_7a1c_e7ba_5e01;

/// A dense vector; unit length, or all zeros for token-free input.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps raw components, L2-normalizing them (zero stays zero).
    pub fn normalized(mut components: Vec<f64>) -> Self {
        let norm = components.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            components.iter_mut().for_each(|x| *x /= norm);
        }
        Self(components)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Single-precision copy, the storage format of the dense index.
    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|x| *x as f32).collect()
    }
}

pub trait Embedder: Send + Sync {
    /// Stable identity persisted next to index artifacts; an index may only
    /// be searched with an embedder of the same identity.
    fn identity(&self) -> String;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Embedding;

    fn embed_batch(&self, texts: &[String]) -> Vec<Embedding> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Signed feature hashing over lowercase alphanumeric tokens.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    seed: u64,
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_SEED)
    }
}

impl HashingEmbedder {
    pub fn new(seed: u64) -> Self {
        Self { seed, dim: DIMENSION }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Embedder for HashingEmbedder {
    fn identity(&self) -> String {
        format!("feature-hash-xxh64:seed={:#018x}:dim={}", self.seed, self.dim)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Embedding {
        let mut acc = vec![0.0f64; self.dim];
        for token in tokenize(text) {
            let h = xxh64(token.as_bytes(), self.seed);
            let bucket = (h % self.dim as u64) as usize;
            acc[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        Embedding::normalized(acc)
    }
}
