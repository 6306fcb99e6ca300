//! Linear adapter trained with the cosine-similarity contrastive loss
//!
//! ```text
//! L = (1/N) * sum_i (cos(W*u_i, W*v_i) - y_i)^2
//! ```
//!
//! where `y_i = 1` for pairs sharing a humanitarian label and `y_i = 0`
//! otherwise. The adapter is a square matrix over frozen base embeddings,
//! initialized to the identity so an untrained adapter is a no-op, and
//! optimized by plain gradient descent with the analytic gradient
//!
//! ```text
//! dL/dW = (2/N) * sum_i e_i * [ (b̂ - c*â)/|a| ⊗ u_i  +  (â - c*b̂)/|b| ⊗ v_i ]
//! ```
//!
//! with `a = W u`, `b = W v`, hats denoting unit vectors, `c` the cosine and
//! `e = c - y`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{EmbeddingBackend, EmbeddingError};
use crate::rng::SplitMix64;
use crate::schema::HumanitarianLabel;

/// A text pair with its similarity target (1.0 same humanitarian label,
/// 0.0 otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub u_text: String,
    pub v_text: String,
    pub target: f64,
}

/// A pair already embedded into base space; what the optimizer consumes.
#[derive(Debug, Clone)]
pub struct VectorPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            learning_rate: 0.05,
        }
    }
}

/// Square matrix mapping base embeddings into task space.
#[derive(Debug, Clone)]
pub struct LinearAdapter {
    weight: Array2<f64>,
    pub trained_steps: usize,
}

#[derive(Serialize, Deserialize)]
struct AdapterFile {
    dimension: usize,
    trained_steps: usize,
    rows: Vec<Vec<f64>>,
}

impl LinearAdapter {
    pub fn identity(dim: usize) -> Self {
        LinearAdapter {
            weight: Array2::eye(dim),
            trained_steps: 0,
        }
    }

    pub fn from_weight(weight: Array2<f64>, trained_steps: usize) -> Self {
        assert_eq!(weight.nrows(), weight.ncols(), "adapter must be square");
        LinearAdapter {
            weight,
            trained_steps,
        }
    }

    pub fn dimension(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let x = Array1::from_vec(input.to_vec());
        self.weight.dot(&x).to_vec()
    }

    /// Persists as JSON: `{"dimension": d, "trained_steps": n, "rows": [[..]]}`.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let file = AdapterFile {
            dimension: self.dimension(),
            trained_steps: self.trained_steps,
            rows: self.weight.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        let mut out = std::fs::File::create(path)?;
        out.write_all(serde_json::to_string(&file)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EmbeddingError::BackendUnavailable(format!("adapter load: {e}")))?;
        let file: AdapterFile = serde_json::from_str(&text)
            .map_err(|e| EmbeddingError::BackendUnavailable(format!("adapter parse: {e}")))?;
        let dim = file.dimension;
        if file.rows.len() != dim || file.rows.iter().any(|r| r.len() != dim) {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                got: file.rows.len(),
            });
        }
        let flat: Vec<f64> = file.rows.into_iter().flatten().collect();
        let weight = Array2::from_shape_vec((dim, dim), flat).expect("shape checked above");
        Ok(LinearAdapter {
            weight,
            trained_steps: file.trained_steps,
        })
    }
}

/// Builds exactly two training pairs per anchor: one positive partner drawn
/// uniformly from the anchor's label (excluding the anchor) and one negative
/// drawn uniformly from all other-label records. Anchors are visited in
/// corpus order and both draws come from one seeded splitmix64 stream
/// (positive first), with candidate lists in corpus order and indices taken
/// as `next_u64() % n`.
pub fn make_pairs(
    corpus: &[(String, HumanitarianLabel)],
    seed: u64,
) -> Result<Vec<TrainingPair>, EmbeddingError> {
    let mut by_label: std::collections::BTreeMap<HumanitarianLabel, Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, (_, label)) in corpus.iter().enumerate() {
        by_label.entry(*label).or_default().push(i);
    }
    if by_label.len() < 2 {
        let label = by_label
            .keys()
            .next()
            .map(|l| l.to_string())
            .unwrap_or_default();
        return Err(EmbeddingError::InsufficientClassMembers(label));
    }
    if let Some((label, _)) = by_label.iter().find(|(_, v)| v.len() < 2) {
        return Err(EmbeddingError::InsufficientClassMembers(label.to_string()));
    }

    let mut rng = SplitMix64::new(seed);
    let mut pairs = Vec::with_capacity(2 * corpus.len());
    for (anchor, (text, label)) in corpus.iter().enumerate() {
        let same: Vec<usize> = by_label[label]
            .iter()
            .copied()
            .filter(|&i| i != anchor)
            .collect();
        let positive = same[rng.index(same.len())];
        pairs.push(TrainingPair {
            u_text: text.clone(),
            v_text: corpus[positive].0.clone(),
            target: 1.0,
        });

        let other: Vec<usize> = (0..corpus.len())
            .filter(|&i| corpus[i].1 != *label)
            .collect();
        let negative = other[rng.index(other.len())];
        pairs.push(TrainingPair {
            u_text: text.clone(),
            v_text: corpus[negative].0.clone(),
            target: 0.0,
        });
    }
    Ok(pairs)
}

/// Embeds both sides of every pair with the given backend.
pub fn embed_pairs(
    pairs: &[TrainingPair],
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<VectorPair>, EmbeddingError> {
    let u_texts: Vec<&str> = pairs.iter().map(|p| p.u_text.as_str()).collect();
    let v_texts: Vec<&str> = pairs.iter().map(|p| p.v_text.as_str()).collect();
    let us = backend.embed(&u_texts)?;
    let vs = backend.embed(&v_texts)?;
    Ok(pairs
        .iter()
        .zip(us.into_iter().zip(vs))
        .map(|(p, (u, v))| VectorPair {
            u: u.values,
            v: v.values,
            target: p.target,
        })
        .collect())
}

/// Mean squared cosine loss of the adapter over the pair batch.
pub fn loss(adapter: &LinearAdapter, pairs: &[VectorPair]) -> Result<f64, EmbeddingError> {
    let mut total = 0.0;
    for (i, pair) in pairs.iter().enumerate() {
        let a = adapter.apply(&pair.u);
        let b = adapter.apply(&pair.v);
        let (na, nb) = (norm(&a), norm(&b));
        if na == 0.0 || nb == 0.0 {
            return Err(EmbeddingError::ZeroNormEmbedding { index: i });
        }
        let c = dot(&a, &b) / (na * nb);
        let e = c - pair.target;
        total += e * e;
    }
    Ok(total / pairs.len() as f64)
}

/// Analytic gradient of [`loss`] with respect to the adapter weight.
pub fn gradient(
    adapter: &LinearAdapter,
    pairs: &[VectorPair],
) -> Result<Array2<f64>, EmbeddingError> {
    let d = adapter.dimension();
    let mut grad = Array2::<f64>::zeros((d, d));
    let scale = 2.0 / pairs.len() as f64;
    for (i, pair) in pairs.iter().enumerate() {
        let a = Array1::from_vec(adapter.apply(&pair.u));
        let b = Array1::from_vec(adapter.apply(&pair.v));
        let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
        if na == 0.0 || nb == 0.0 {
            return Err(EmbeddingError::ZeroNormEmbedding { index: i });
        }
        let a_hat = &a / na;
        let b_hat = &b / nb;
        let c = a_hat.dot(&b_hat);
        let e = c - pair.target;

        let dc_da = (&b_hat - &(&a_hat * c)) / na;
        let dc_db = (&a_hat - &(&b_hat * c)) / nb;
        let u = Array1::from_vec(pair.u.clone());
        let v = Array1::from_vec(pair.v.clone());
        grad += &(outer(&dc_da, &u) * (scale * e));
        grad += &(outer(&dc_db, &v) * (scale * e));
    }
    Ok(grad)
}

/// Full-batch gradient descent from the identity adapter. Returns the
/// trained adapter and the loss trace: entry 0 is the initial loss, entry
/// `s` the loss after step `s` (`steps + 1` values in total).
pub fn train_adapter(
    pairs: &[VectorPair],
    config: &TrainConfig,
) -> Result<(LinearAdapter, Vec<f64>), EmbeddingError> {
    assert!(!pairs.is_empty(), "training needs at least one pair");
    let dim = pairs[0].u.len();
    let mut adapter = LinearAdapter::identity(dim);
    let mut trace = Vec::with_capacity(config.steps + 1);
    trace.push(loss(&adapter, pairs)?);
    for step in 0..config.steps {
        let grad = gradient(&adapter, pairs)?;
        adapter.weight = &adapter.weight - &(grad * config.learning_rate);
        adapter.trained_steps += 1;
        let current = loss(&adapter, pairs)?;
        if !current.is_finite() {
            return Err(EmbeddingError::DivergedLoss { step: step + 1 });
        }
        trace.push(current);
    }
    Ok((adapter, trace))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (n, m) = (a.len(), b.len());
    let mut out = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            out[[i, j]] = a[i] * b[j];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
