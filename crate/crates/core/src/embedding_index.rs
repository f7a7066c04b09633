//! Embedding providers, the exhaustive-scan chunk vector index, and the
//! query/chunk similarity cache shared with context organization.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{ProviderError, RetryError, RetryPolicy};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding provider failed: {0}")]
    Provider(#[from] RetryError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("index built with `{index}` but provider is `{provider}`")]
    FingerprintMismatch { index: String, provider: String },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    /// Provider name + model id + dimension.
    fn fingerprint(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed(texts)
    }
}

/// Embeds `texts` in batches, checking vector count, dimension and finiteness.
pub fn embed_texts(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
    batch_size: usize,
    retry: &RetryPolicy,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    let mut out = Vec::with_capacity(texts.len());
    for batch in texts.chunks(batch_size.max(1)) {
        let vectors = retry.run(|| provider.embed(batch))?;
        if vectors.len() != batch.len() {
            return Err(EmbeddingError::CountMismatch { expected: batch.len(), got: vectors.len() });
        }
        for v in vectors {
            if v.dim() != provider.dimension() {
                return Err(EmbeddingError::DimensionMismatch { expected: provider.dimension(), got: v.dim() });
            }
            if !v.is_finite() {
                return Err(EmbeddingError::NonFinite);
            }
            out.push(v);
        }
    }
    Ok(out)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric runs.
pub fn feature_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Deterministic bag-of-features embedder: each token adds 1 to bucket
/// `fnv1a(token) mod dim`, then the vector is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0.0; self.dim];
        let tokens = feature_tokens(text);
        if tokens.is_empty() {
            // texts without alphanumerics still get a stable nonzero vector
            v[(fnv1a(text.trim().as_bytes()) % self.dim as u64) as usize] = 1.0;
        }
        for token in &tokens {
            v[(fnv1a(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        EmbeddingVector(v.into_iter().map(|x| x / norm).collect())
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn fingerprint(&self) -> String {
        format!("hash-bow/fnv1a/{}", self.dim)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    pub score: f64,
}

/// Ranking order: score descending, then chunk id ascending.
pub fn rank_order(a: &ScoredChunk, b: &ScoredChunk) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id))
}

struct Ranked(ScoredChunk);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    // "greater" = ranked later, so the max-heap top is the current worst
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

/// Keeps the best `k` entries with a bounded heap.
pub fn select_top_k(scores: impl IntoIterator<Item = ScoredChunk>, k: usize) -> Vec<ScoredChunk> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    for s in scores {
        if heap.len() < k {
            heap.push(Ranked(s));
        } else if let Some(worst) = heap.peek() {
            if rank_order(&s, &worst.0) == Ordering::Less {
                heap.pop();
                heap.push(Ranked(s));
            }
        }
    }
    heap.into_sorted_vec().into_iter().map(|r| r.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexHeader {
    fingerprint: String,
    dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    chunk_id: String,
    vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    fingerprint: String,
    dimension: usize,
    entries: BTreeMap<String, (EmbeddingVector, f64)>,
}

impl VectorIndex {
    pub fn new(fingerprint: impl Into<String>, dimension: usize) -> Self {
        Self { fingerprint: fingerprint.into(), dimension, entries: BTreeMap::new() }
    }

    pub fn for_provider(provider: &dyn EmbeddingProvider) -> Self {
        Self::new(provider.fingerprint(), provider.dimension())
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.entries.contains_key(chunk_id)
    }

    pub fn get(&self, chunk_id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(chunk_id).map(|(v, _)| v)
    }

    pub fn chunk_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, chunk_id: impl Into<String>, vector: EmbeddingVector) -> Result<(), EmbeddingError> {
        if vector.dim() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dimension, got: vector.dim() });
        }
        if !vector.is_finite() {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = vector.norm();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        self.entries.insert(chunk_id.into(), (vector, norm));
        Ok(())
    }

    pub fn remove(&mut self, chunk_id: &str) -> bool {
        self.entries.remove(chunk_id).is_some()
    }

    /// Embeds and inserts chunk texts not yet present; returns how many were added.
    pub fn add_texts(
        &mut self,
        provider: &dyn EmbeddingProvider,
        items: &[(String, String)],
        batch_size: usize,
        retry: &RetryPolicy,
    ) -> Result<usize, EmbeddingError> {
        self.check_provider(provider)?;
        let todo: Vec<&(String, String)> = items.iter().filter(|(id, _)| !self.contains(id)).collect();
        let texts: Vec<String> = todo.iter().map(|(_, t)| t.clone()).collect();
        let vectors = embed_texts(provider, &texts, batch_size, retry)?;
        for ((id, _), v) in todo.iter().zip(vectors) {
            self.insert(id.clone(), v)?;
        }
        Ok(todo.len())
    }

    pub fn check_provider(&self, provider: &dyn EmbeddingProvider) -> Result<(), EmbeddingError> {
        if provider.fingerprint() != self.fingerprint {
            return Err(EmbeddingError::FingerprintMismatch {
                index: self.fingerprint.clone(),
                provider: provider.fingerprint(),
            });
        }
        Ok(())
    }

    /// Cosine of `query` against every indexed chunk, in chunk-id order.
    pub fn score_all(&self, query: &EmbeddingVector) -> Result<Vec<ScoredChunk>, EmbeddingError> {
        if query.dim() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dimension, got: query.dim() });
        }
        let qn = query.norm();
        if qn == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(self
            .entries
            .iter()
            .map(|(id, (v, n))| ScoredChunk {
                chunk_id: id.clone(),
                score: (dot(&query.0, &v.0) / (qn * n)).clamp(-1.0, 1.0),
            })
            .collect())
    }

    /// A copy restricted to the given chunk ids.
    pub fn restricted<'a>(&self, chunk_ids: impl IntoIterator<Item = &'a str>) -> VectorIndex {
        let mut out = VectorIndex::new(self.fingerprint.clone(), self.dimension);
        for id in chunk_ids {
            if let Some(e) = self.entries.get(id) {
                out.entries.insert(id.to_string(), e.clone());
            }
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), EmbeddingError> {
        let header = IndexHeader { fingerprint: self.fingerprint.clone(), dimension: self.dimension };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for (id, (v, _)) in &self.entries {
            serde_json::to_writer(&mut out, &IndexEntry { chunk_id: id.clone(), vector: v.clone() })
                .map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, EmbeddingError> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| EmbeddingError::Format("empty file".into()))??;
        let header: IndexHeader =
            serde_json::from_str(&first).map_err(|e| EmbeddingError::Format(format!("header: {e}")))?;
        let mut index = VectorIndex::new(header.fingerprint, header.dimension);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexEntry = serde_json::from_str(&line)
                .map_err(|e| EmbeddingError::Format(format!("line {}: {e}", i + 2)))?;
            index.insert(entry.chunk_id, entry.vector)?;
        }
        Ok(index)
    }
}

/// Full-scan top-k over the index.
pub fn top_k(index: &VectorIndex, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredChunk>, EmbeddingError> {
    if k == 0 {
        return Err(EmbeddingError::InvalidK);
    }
    if index.is_empty() {
        return Ok(Vec::new());
    }
    Ok(select_top_k(index.score_all(query)?, k))
}

/// s(q, c) values keyed by (query text, chunk id).
#[derive(Debug, Default)]
pub struct SimilarityCache {
    inner: Mutex<HashMap<(String, String), f64>>,
}

impl SimilarityCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, query: &str, chunk_id: &str) -> Option<f64> {
        self.inner.lock().unwrap().get(&(query.to_string(), chunk_id.to_string())).copied()
    }

    pub fn insert(&self, query: &str, chunk_id: &str, score: f64) {
        self.inner.lock().unwrap().insert((query.to_string(), chunk_id.to_string()), score);
    }

    pub fn insert_all(&self, query: &str, scores: &[ScoredChunk]) {
        let mut map = self.inner.lock().unwrap();
        for s in scores {
            map.insert((query.to_string(), s.chunk_id.clone()), s.score);
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
