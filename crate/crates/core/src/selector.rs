//! Dynamic demonstration selection.
//!
//! Each demonstration is keyed by its low-level instruction. The key whose
//! embedding has the highest cosine similarity with the high-level
//! instruction wins; its step decomposition becomes the in-context example.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm_client::{GatewayClient, LmError};
use crate::world::fnv1a;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("no embedding stored for {0:?}")]
    MissingEmbedding(String),
    #[error("embedding provider failed: {0}")]
    Provider(#[from] LmError),
    #[error("demonstration set is empty")]
    EmptyDemoSet,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("invalid demonstration: {0}")]
    InvalidDemo(String),
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T, E = SelectorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub low_level_instruction: String,
    pub steps: Vec<String>,
}

impl Demonstration {
    pub fn validate(&self) -> Result<()> {
        if self.low_level_instruction.trim().is_empty() {
            return Err(SelectorError::InvalidDemo(format!("{:?} has an empty instruction", self.id)));
        }
        if self.steps.is_empty() || self.steps.iter().any(|s| s.trim().is_empty()) {
            return Err(SelectorError::InvalidDemo(format!("{:?} has empty steps", self.id)));
        }
        Ok(())
    }
}

pub fn load_demonstrations(path: &Path) -> Result<Vec<Demonstration>> {
    let text = fs::read_to_string(path).map_err(|source| SelectorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let demos: Vec<Demonstration> = serde_json::from_str(&text)?;
    if demos.is_empty() {
        return Err(SelectorError::EmptyDemoSet);
    }
    demos.iter().try_for_each(Demonstration::validate)?;
    Ok(demos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(SelectorError::InvalidEmbedding("empty vector".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(SelectorError::InvalidEmbedding("non-finite entry".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(q: &EmbeddingVector, k: &EmbeddingVector) -> Result<f64> {
    if q.dim() != k.dim() {
        return Err(SelectorError::DimensionMismatch(q.dim(), k.dim()));
    }
    let dot: f64 = q.0.iter().zip(&k.0).map(|(a, b)| a * b).sum();
    let nq = q.0.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nk = k.0.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nq == 0.0 || nk == 0.0 {
        return Err(SelectorError::ZeroVector);
    }
    Ok((dot / (nq * nk)).clamp(-1.0, 1.0))
}

/// Sentence embedding backend.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for &T {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed(text)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<T> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed(text)
    }
}

pub fn embed(text: &str, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector> {
    if text.trim().is_empty() {
        return Err(SelectorError::EmptyText);
    }
    provider.embed(text)
}

/// Lowercase, trimmed, single-spaced lookup key.
pub fn normalize_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreLine {
    key: String,
    vector: Vec<f32>,
}

/// Precomputed embeddings looked up by normalized text.
#[derive(Debug, Clone, Default)]
pub struct FileStore {
    dim: usize,
    entries: HashMap<String, Vec<f32>>,
    order: Vec<String>,
}

impl FileStore {
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: AsRef<str>,
    {
        let mut store = Self::default();
        for (k, v) in pairs {
            store.insert(k.as_ref(), v)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, key: &str, vector: Vec<f32>) -> Result<()> {
        if vector.is_empty() || !vector.iter().all(|v| v.is_finite()) {
            return Err(SelectorError::InvalidEmbedding(format!("bad vector for {key:?}")));
        }
        if self.order.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(SelectorError::DimensionMismatch(self.dim, vector.len()));
        }
        let key = normalize_key(key);
        if self.entries.insert(key.clone(), vector).is_none() {
            self.order.push(key);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| SelectorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut store = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: StoreLine = serde_json::from_str(line)?;
            store.insert(&rec.key, rec.vector)?;
        }
        Ok(store)
    }

    /// One `{"key", "vector"}` object per line, in insertion order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for key in &self.order {
            let line = StoreLine {
                key: key.clone(),
                vector: self.entries[key].clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("store line serializes"));
            out.push('\n');
        }
        out
    }
}

impl EmbeddingProvider for FileStore {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let key = normalize_key(text);
        let v = self
            .entries
            .get(&key)
            .ok_or_else(|| SelectorError::MissingEmbedding(key.clone()))?;
        EmbeddingVector::new(v.iter().map(|&x| x as f64).collect())
    }
}

/// Deterministic pseudo-embedding from hashed unigrams and bigrams.
///
/// Each feature seeds a dense pseudo-random vector; the embedding is their
/// sum. Texts sharing words land close together, which is enough for
/// exercising selection without a sentence encoder.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl HashEmbedder {
    fn add_feature(&self, acc: &mut [f64], feature: &str) {
        let mut state = fnv1a(feature.as_bytes());
        for a in acc.iter_mut() {
            let bits = splitmix64(&mut state) >> 11;
            *a += (bits as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let norm = normalize_key(text);
        if norm.is_empty() {
            return Err(SelectorError::EmptyText);
        }
        let words: Vec<&str> = norm
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let mut acc = vec![0.0; self.dim.max(1)];
        if words.is_empty() {
            self.add_feature(&mut acc, &norm);
        }
        for w in &words {
            self.add_feature(&mut acc, w);
        }
        for pair in words.windows(2) {
            self.add_feature(&mut acc, &format!("{} {}", pair[0], pair[1]));
        }
        EmbeddingVector::new(acc)
    }
}

impl EmbeddingProvider for GatewayClient {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut vs = self.embed_batch(&[text])?;
        EmbeddingVector::new(vs.remove(0).into_iter().map(|x| x as f64).collect())
    }
}

/// Every demonstration's cosine score against the query, best first; ties
/// keep list order.
pub fn rank_demonstrations(
    query: &str,
    demos: &[Demonstration],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<(usize, f64)>> {
    if demos.is_empty() {
        return Err(SelectorError::EmptyDemoSet);
    }
    let q = embed(query, provider)?;
    let mut scored = Vec::with_capacity(demos.len());
    for (i, d) in demos.iter().enumerate() {
        let k = embed(&d.low_level_instruction, provider)?;
        scored.push((i, cosine(&q, &k)?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

/// The demonstration whose key best matches `query`, with its score.
pub fn select_demonstration<'d>(
    query: &str,
    demos: &'d [Demonstration],
    provider: &dyn EmbeddingProvider,
) -> Result<(&'d Demonstration, f64)> {
    let (i, score) = rank_demonstrations(query, demos, provider)?[0];
    Ok((&demos[i], score))
}
