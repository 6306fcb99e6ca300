//! Clustering quality of a labeled embedding set.
//!
//! Both metrics use Euclidean distance on the raw vectors. The separation
//! ratio is the mean pairwise inter-class distance over the mean pairwise
//! intra-class distance; the silhouette is the usual per-point
//! `(b - a) / max(a, b)` averaged over all points, where `a` is the mean
//! distance to the point's own cluster (excluding itself) and `b` the
//! smallest mean distance to any other cluster.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::EmbeddingError;

/// Separation-ratio result with its two components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationStats {
    pub mean_intra: f64,
    pub mean_inter: f64,
    pub ratio: f64,
}

/// Combined clustering metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub separation_ratio: f64,
    pub silhouette: f64,
    pub mean_intra: f64,
    pub mean_inter: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Maps arbitrary labels to dense cluster ids, validating that at least two
/// clusters exist and every cluster has at least two members.
fn cluster_ids<L: PartialEq>(labels: &[L]) -> Result<Vec<usize>, EmbeddingError> {
    let mut distinct: Vec<&L> = Vec::new();
    let ids: Vec<usize> = labels
        .iter()
        .map(|l| {
            if let Some(pos) = distinct.iter().position(|d| *d == l) {
                pos
            } else {
                distinct.push(l);
                distinct.len() - 1
            }
        })
        .collect();
    if distinct.len() < 2 {
        return Err(EmbeddingError::TooFewLabels);
    }
    for c in 0..distinct.len() {
        if ids.iter().filter(|&&i| i == c).count() < 2 {
            return Err(EmbeddingError::InsufficientClassMembers(format!(
                "cluster {c}"
            )));
        }
    }
    Ok(ids)
}

fn validate_shapes<L>(embeddings: &[Vec<f64>], labels: &[L]) -> Result<(), EmbeddingError> {
    if embeddings.len() != labels.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: labels.len(),
            got: embeddings.len(),
        });
    }
    Ok(())
}

/// Mean intra- and inter-class pairwise distances and their ratio.
/// `DegenerateIntra` when every same-class pair coincides.
pub fn separation_ratio<L: PartialEq>(
    embeddings: &[Vec<f64>],
    labels: &[L],
) -> Result<SeparationStats, EmbeddingError> {
    validate_shapes(embeddings, labels)?;
    let ids = cluster_ids(labels)?;
    let n = embeddings.len();

    let row = |i: usize| -> (f64, u64, f64, u64) {
        let mut acc = (0.0, 0u64, 0.0, 0u64);
        for j in (i + 1)..n {
            let d = euclidean(&embeddings[i], &embeddings[j]);
            if ids[i] == ids[j] {
                acc.0 += d;
                acc.1 += 1;
            } else {
                acc.2 += d;
                acc.3 += 1;
            }
        }
        acc
    };

    #[cfg(feature = "parallel")]
    let (intra_sum, intra_n, inter_sum, inter_n) = (0..n).into_par_iter().map(row).reduce(
        || (0.0, 0, 0.0, 0),
        |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3),
    );
    #[cfg(not(feature = "parallel"))]
    let (intra_sum, intra_n, inter_sum, inter_n) =
        (0..n).map(row).fold((0.0, 0, 0.0, 0), |a, b| {
            (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3)
        });

    let mean_intra = intra_sum / intra_n as f64;
    let mean_inter = inter_sum / inter_n as f64;
    if mean_intra == 0.0 {
        return Err(EmbeddingError::DegenerateIntra);
    }
    Ok(SeparationStats {
        mean_intra,
        mean_inter,
        ratio: mean_inter / mean_intra,
    })
}

/// Mean silhouette coefficient; always in [-1, 1]. Points where both `a` and
/// `b` are zero contribute 0.
pub fn silhouette<L: PartialEq>(
    embeddings: &[Vec<f64>],
    labels: &[L],
) -> Result<f64, EmbeddingError> {
    validate_shapes(embeddings, labels)?;
    let ids = cluster_ids(labels)?;
    let n = embeddings.len();
    let n_clusters = ids.iter().max().unwrap() + 1;
    let sizes: Vec<usize> = (0..n_clusters)
        .map(|c| ids.iter().filter(|&&i| i == c).count())
        .collect();

    let point_score = |i: usize| -> f64 {
        let mut sums = vec![0.0f64; n_clusters];
        for j in 0..n {
            if i != j {
                sums[ids[j]] += euclidean(&embeddings[i], &embeddings[j]);
            }
        }
        let own = ids[i];
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_clusters)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom == 0.0 {
            0.0
        } else {
            (b - a) / denom
        }
    };

    #[cfg(feature = "parallel")]
    let total: f64 = (0..n).into_par_iter().map(point_score).sum();
    #[cfg(not(feature = "parallel"))]
    let total: f64 = (0..n).map(point_score).sum();

    Ok(total / n as f64)
}

/// Both metrics in one call.
pub fn cluster_metrics<L: PartialEq>(
    embeddings: &[Vec<f64>],
    labels: &[L],
) -> Result<ClusterMetrics, EmbeddingError> {
    let sep = separation_ratio(embeddings, labels)?;
    let sil = silhouette(embeddings, labels)?;
    Ok(ClusterMetrics {
        separation_ratio: sep.ratio,
        silhouette: sil,
        mean_intra: sep.mean_intra,
        mean_inter: sep.mean_inter,
    })
}
