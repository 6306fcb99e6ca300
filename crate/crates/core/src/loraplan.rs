//! Low-rank adapter accounting and the update algebra on toy matrices.
//!
//! For a frozen weight `W0` of shape `d_out x d_in`, a rank-`r` adapter adds
//! `r * d_in` parameters for `A` and `d_out * r` for `B`, and the adapted
//! forward pass is `h = W0 x + (alpha / r) * B A x`. This module counts
//! those parameters per target matrix across layers and verifies the algebra
//! numerically; it performs no training.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoraError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rank must be at least 1")]
    InvalidRank,
}

/// Transformer dimensions the adapter attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub hidden: u64,
    pub intermediate: u64,
    /// Key/value projection width (smaller than `hidden` under grouped-query
    /// attention).
    pub kv_dim: u64,
    pub layers: u64,
    pub total_params: u64,
}

impl ModelDims {
    /// Dimensions of the standard 8B decoder stack: hidden 4096,
    /// intermediate 14336, grouped-query kv width 1024 (hidden/4), 32
    /// layers, 8.03B total parameters.
    pub fn standard_8b() -> Self {
        ModelDims {
            hidden: 4096,
            intermediate: 14336,
            kv_dim: 1024,
            layers: 32,
            total_params: 8_030_261_248,
        }
    }
}

/// Projection matrices an adapter can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoraTarget {
    QProj,
    KProj,
    VProj,
    OProj,
    GateProj,
    UpProj,
    DownProj,
}

impl LoraTarget {
    pub const ALL: [LoraTarget; 7] = [
        LoraTarget::QProj,
        LoraTarget::KProj,
        LoraTarget::VProj,
        LoraTarget::OProj,
        LoraTarget::GateProj,
        LoraTarget::UpProj,
        LoraTarget::DownProj,
    ];

    /// (d_out, d_in) of the frozen matrix this target wraps.
    pub fn shape(&self, dims: &ModelDims) -> (u64, u64) {
        match self {
            LoraTarget::QProj | LoraTarget::OProj => (dims.hidden, dims.hidden),
            LoraTarget::KProj | LoraTarget::VProj => (dims.kv_dim, dims.hidden),
            LoraTarget::GateProj | LoraTarget::UpProj => (dims.intermediate, dims.hidden),
            LoraTarget::DownProj => (dims.hidden, dims.intermediate),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LoraTarget::QProj => "q_proj",
            LoraTarget::KProj => "k_proj",
            LoraTarget::VProj => "v_proj",
            LoraTarget::OProj => "o_proj",
            LoraTarget::GateProj => "gate_proj",
            LoraTarget::UpProj => "up_proj",
            LoraTarget::DownProj => "down_proj",
        }
    }

    pub fn parse(s: &str) -> Option<LoraTarget> {
        LoraTarget::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s || t.as_str().trim_end_matches("_proj") == s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: u64,
    pub alpha: f64,
    pub targets: Vec<LoraTarget>,
}

impl LoraConfig {
    pub fn new(rank: u64, alpha: f64, targets: Vec<LoraTarget>) -> Result<Self, LoraError> {
        if rank == 0 {
            return Err(LoraError::InvalidRank);
        }
        Ok(LoraConfig {
            rank,
            alpha,
            targets,
        })
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Per-target parameter breakdown for one layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TargetCount {
    pub target: LoraTarget,
    pub d_out: u64,
    pub d_in: u64,
    /// `rank * d_in + d_out * rank`, per layer.
    pub params_per_layer: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoraPlan {
    pub rank: u64,
    pub alpha: f64,
    pub scaling: f64,
    pub per_target: Vec<TargetCount>,
    pub layers: u64,
    pub trainable: u64,
    pub total_params: u64,
    pub trainable_ratio: f64,
}

/// Counts trainable adapter parameters for the configuration: each target
/// matrix contributes `rank * d_in + d_out * rank` per layer.
pub fn count_params(dims: &ModelDims, config: &LoraConfig) -> Result<LoraPlan, LoraError> {
    if config.rank == 0 {
        return Err(LoraError::InvalidRank);
    }
    let per_target: Vec<TargetCount> = config
        .targets
        .iter()
        .map(|&target| {
            let (d_out, d_in) = target.shape(dims);
            TargetCount {
                target,
                d_out,
                d_in,
                params_per_layer: config.rank * d_in + d_out * config.rank,
            }
        })
        .collect();
    let per_layer: u64 = per_target.iter().map(|t| t.params_per_layer).sum();
    let trainable = per_layer * dims.layers;
    Ok(LoraPlan {
        rank: config.rank,
        alpha: config.alpha,
        scaling: config.scaling(),
        per_target,
        layers: dims.layers,
        trainable,
        total_params: dims.total_params,
        trainable_ratio: trainable as f64 / dims.total_params as f64,
    })
}

/// Adapted forward pass `W0 x + (alpha / r) * B (A x)`.
pub fn lora_forward(
    w0: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    alpha: f64,
    r: u64,
    x: &Array1<f64>,
) -> Result<Array1<f64>, LoraError> {
    if r == 0 {
        return Err(LoraError::InvalidRank);
    }
    let (d_out, d_in) = (w0.nrows(), w0.ncols());
    if a.ncols() != d_in || a.nrows() != r as usize {
        return Err(LoraError::ShapeMismatch(format!(
            "A must be {r}x{d_in}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.nrows() != d_out || b.ncols() != r as usize {
        return Err(LoraError::ShapeMismatch(format!(
            "B must be {d_out}x{r}, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    if x.len() != d_in {
        return Err(LoraError::ShapeMismatch(format!(
            "x must have length {d_in}, got {}",
            x.len()
        )));
    }
    let scaling = alpha / r as f64;
    Ok(w0.dot(x) + b.dot(&a.dot(x)) * scaling)
}
