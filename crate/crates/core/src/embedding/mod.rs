//! Embedding vectors and the backends that produce them.
//!
//! Two backends ship: an HTTP client for an external embedding service, and
//! a deterministic hashed bag-of-tokens embedder for tests and offline runs.
//! The hashed embedder is fully specified so an independent implementation
//! can reproduce it: each token (lowercased, split on non-alphanumeric) is
//! hashed with 64-bit FNV-1a (`h = 0xcbf29ce484222325`, then per byte
//! `h ^= byte; h *= 0x100000001b3`); the token adds `+1` or `-1` (sign from
//! bit 63 of the hash) to component `h % d`; the summed vector is
//! L2-normalized.

pub mod adapter;
pub mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::tfidf::tokenize;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("text at batch index {index} is empty")]
    EmptyText { index: usize },
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label `{0}` needs at least two members (and at least two labels must exist)")]
    InsufficientClassMembers(String),
    #[error("zero-norm embedding at index {index}")]
    ZeroNormEmbedding { index: usize },
    #[error("training loss became non-finite at step {step}")]
    DivergedLoss { step: usize },
    #[error("mean intra-class distance is zero; separation ratio undefined")]
    DegenerateIntra,
    #[error("metric needs at least two distinct labels")]
    TooFewLabels,
}

/// A dense embedding with an explicit record of whether it has been
/// L2-normalized (within 1e-6).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector {
            values,
            normalized: false,
        }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// L2-normalizes in place; `Err` when the norm is zero.
    pub fn normalize(&mut self) -> Result<(), EmbeddingError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbeddingError::ZeroNormEmbedding { index: 0 });
        }
        for v in &mut self.values {
            *v /= n;
        }
        self.normalized = true;
        Ok(())
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }
}

/// Anything that can turn texts into fixed-dimension vectors.
pub trait EmbeddingBackend: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<B> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        (**self).embed(texts)
    }
}

/// Deterministic hashed bag-of-tokens embedder (see module docs for the
/// exact construction). Default dimension 384.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dim: usize,
}

impl HashedEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        HashedEmbedder { dim }
    }

    fn embed_one(&self, text: &str, index: usize) -> Result<EmbeddingVector, EmbeddingError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EmbeddingError::EmptyText { index });
        }
        let mut values = vec![0.0f64; self.dim];
        for token in &tokens {
            let h = fnv1a64(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign;
        }
        let mut vector = EmbeddingVector::new(values);
        vector
            .normalize()
            .map_err(|_| EmbeddingError::ZeroNormEmbedding { index })?;
        Ok(vector)
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder::new(384)
    }
}

impl EmbeddingBackend for HashedEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        #[cfg(feature = "parallel")]
        {
            texts
                .par_iter()
                .enumerate()
                .map(|(i, t)| self.embed_one(t, i))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| self.embed_one(t, i))
                .collect()
        }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// HTTP embedding client. POSTs `{"texts": [...]}` to `<base_url>/embed` and
/// expects `{"vectors": [[f64, ...], ...]}` back, one vector per text in
/// order.
pub struct HttpEmbedder {
    base_url: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, dim: usize) -> Self {
        HttpEmbedder {
            base_url: base_url.into(),
            dim,
            client: reqwest::blocking::Client::new(),
        }
    }

    /// Reads the base URL from `CRISIS_EMBED_BASE_URL`.
    pub fn from_env(dim: usize) -> Result<Self, EmbeddingError> {
        let base_url = std::env::var("CRISIS_EMBED_BASE_URL").map_err(|_| {
            EmbeddingError::BackendUnavailable("CRISIS_EMBED_BASE_URL is not set".into())
        })?;
        Ok(HttpEmbedder::new(base_url, dim))
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyText { index });
        }
        let url = format!("{}/embed", self.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| EmbeddingError::BackendUnavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(EmbeddingError::BackendUnavailable(format!(
                "{url} returned {}",
                response.status()
            )));
        }
        let body: EmbedResponse = response
            .json()
            .map_err(|e| EmbeddingError::BackendUnavailable(format!("bad response: {e}")))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbeddingError::BackendUnavailable(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|values| {
                if values.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.dim,
                        got: values.len(),
                    });
                }
                Ok(EmbeddingVector::new(values))
            })
            .collect()
    }
}

/// Wraps a backend so every embedding passes through a trained linear
/// adapter. Outputs are not re-normalized here; index construction decides.
pub struct AdaptedEmbedder<B> {
    base: B,
    adapter: adapter::LinearAdapter,
}

impl<B: EmbeddingBackend> AdaptedEmbedder<B> {
    pub fn new(base: B, adapter: adapter::LinearAdapter) -> Result<Self, EmbeddingError> {
        if adapter.dimension() != base.dimension() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: base.dimension(),
                got: adapter.dimension(),
            });
        }
        Ok(AdaptedEmbedder { base, adapter })
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for AdaptedEmbedder<B> {
    fn dimension(&self) -> usize {
        self.base.dimension()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let base = self.base.embed(texts)?;
        Ok(base
            .into_iter()
            .map(|v| EmbeddingVector::new(self.adapter.apply(&v.values)))
            .collect())
    }
}
