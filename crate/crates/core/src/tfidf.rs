//! Bag-of-words TF-IDF with cosine similarity, used to pick dynamic few-shot
//! demonstrations.
//!
//! Weighting is the bare form: raw term count times `ln(|D| / df(t))`, no
//! smoothing, no stopwords. Tokenization is lowercase text split on
//! non-alphanumeric characters with empty tokens dropped; document frequency
//! is at least 1 for every vocabulary term by construction.

use std::collections::HashMap;

use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum TfidfError {
    #[error("cannot fit a model on an empty corpus")]
    EmptyCorpus,
}

/// Sparse vector as (term index, weight) pairs sorted by index.
pub type SparseVector = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct TfidfModel {
    pub vocabulary: HashMap<String, usize>,
    pub idf: Vec<f64>,
    pub doc_vectors: Vec<SparseVector>,
    doc_norms: Vec<f64>,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl TfidfModel {
    /// Fits vocabulary, idf, and per-document weighted vectors. Vocabulary
    /// indices are assigned in first-occurrence order, so fitting is
    /// deterministic for a given document list.
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> Result<TfidfModel, TfidfError> {
        if docs.is_empty() {
            return Err(TfidfError::EmptyCorpus);
        }
        let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d.as_ref())).collect();

        let mut vocabulary: HashMap<String, usize> = HashMap::new();
        let mut df: Vec<u64> = Vec::new();
        for tokens in &tokenized {
            let mut seen_in_doc = std::collections::HashSet::new();
            for token in tokens {
                let next = vocabulary.len();
                let idx = *vocabulary.entry(token.clone()).or_insert_with(|| {
                    df.push(0);
                    next
                });
                if seen_in_doc.insert(idx) {
                    df[idx] += 1;
                }
            }
        }

        let n_docs = docs.len() as f64;
        let idf: Vec<f64> = df.iter().map(|&d| (n_docs / d as f64).ln()).collect();

        let doc_vectors: Vec<SparseVector> = tokenized
            .iter()
            .map(|tokens| weigh(tokens, &vocabulary, &idf))
            .collect();
        let doc_norms = doc_vectors.iter().map(norm).collect();

        Ok(TfidfModel {
            vocabulary,
            idf,
            doc_vectors,
            doc_norms,
        })
    }

    /// TF-IDF vector for an arbitrary query; terms outside the vocabulary are
    /// ignored.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        let tokens = tokenize(text);
        weigh(&tokens, &self.vocabulary, &self.idf)
    }

    /// Ranks all fitted documents against `query` by cosine similarity,
    /// descending, ties broken by lower document index. `k` is clamped to the
    /// corpus size. A zero-norm side yields similarity 0.
    pub fn cosine_topk(&self, query: &str, k: usize) -> Vec<(usize, f64)> {
        let qvec = self.vectorize(query);
        let qnorm = norm(&qvec);

        let score = |i: usize| -> (usize, f64) {
            let denom = qnorm * self.doc_norms[i];
            if denom == 0.0 {
                return (i, 0.0);
            }
            (i, sparse_dot(&qvec, &self.doc_vectors[i]) / denom)
        };

        #[cfg(feature = "parallel")]
        let mut scored: Vec<(usize, f64)> = (0..self.doc_vectors.len())
            .into_par_iter()
            .map(score)
            .collect();
        #[cfg(not(feature = "parallel"))]
        let mut scored: Vec<(usize, f64)> = (0..self.doc_vectors.len()).map(score).collect();

        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k.min(self.doc_vectors.len()));
        scored
    }
}

fn weigh(tokens: &[String], vocabulary: &HashMap<String, usize>, idf: &[f64]) -> SparseVector {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for token in tokens {
        if let Some(&idx) = vocabulary.get(token) {
            *counts.entry(idx).or_default() += 1.0;
        }
    }
    let mut vec: SparseVector = counts.into_iter().map(|(i, tf)| (i, tf * idf[i])).collect();
    vec.sort_by_key(|&(i, _)| i);
    vec
}

fn sparse_dot(a: &SparseVector, b: &SparseVector) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

fn norm(v: &SparseVector) -> f64 {
    v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
}

/// Cosine similarity between two sparse vectors, 0 when either norm is 0.
pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        sparse_dot(a, b) / denom
    }
}
