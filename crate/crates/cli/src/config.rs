//! Experiment configuration: a single JSON document, with command-line
//! flags taking precedence over config fields, which take precedence over
//! defaults. The resolved configuration is hashed (sha256, first 16 hex
//! chars) and that hash plus the seed are embedded in every output artifact.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crisis_core::corpus::Split;
use crisis_core::embedding::adapter::LinearAdapter;
use crisis_core::embedding::{AdaptedEmbedder, EmbeddingBackend, HashedEmbedder, HttpEmbedder};
use crisis_core::prompting::ShotConfig;
use crisis_core::strategies::StrategyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// HTTP backend configured from `CRISIS_LLM_*` environment variables.
    Env,
    /// Scripted mock driven by a per-sample script file.
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hashed,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hashed,
            dim: 384,
        }
    }
}

/// The experiment document. Every field has a default so a minimal config
/// only names the paths it actually uses.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Corpus to classify (JSONL).
    pub corpus: Option<PathBuf>,
    /// Which split label to attach to `corpus` records.
    pub corpus_split: Split,
    /// Demonstration / retrieval pool (JSONL).
    pub train_corpus: Option<PathBuf>,
    /// Base path of a saved vector index.
    pub index: Option<PathBuf>,
    /// Trained linear adapter applied on top of the embedder.
    pub adapter: Option<PathBuf>,
    /// Outcome JSONL destination.
    pub output: Option<PathBuf>,
    pub strategy: StrategyConfig,
    pub shots: ShotConfig,
    /// Manual demonstration file (JSONL) for the manual shot strategy.
    pub manual_demos: Option<PathBuf>,
    pub backend: BackendKind,
    /// Per-sample mock script (JSONL), required when `backend` is `mock`.
    pub mock_script: Option<PathBuf>,
    pub embedder: EmbedderConfig,
    /// Maximum samples processed concurrently.
    pub in_flight: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: None,
            corpus_split: Split::Test,
            train_corpus: None,
            index: None,
            adapter: None,
            output: None,
            strategy: StrategyConfig::default(),
            shots: ShotConfig::default(),
            manual_demos: None,
            backend: BackendKind::Env,
            mock_script: None,
            embedder: EmbedderConfig::default(),
            in_flight: 8,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))
    }

    /// First 16 hex chars of the sha256 of the resolved config JSON.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn require_corpus(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .context("config needs a `corpus` path")
    }

    pub fn require_output(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .context("config needs an `output` path")
    }

    /// Builds the configured embedder, wrapping it in the adapter when one
    /// is configured.
    pub fn build_embedder(&self) -> Result<Box<dyn EmbeddingBackend>> {
        let base: Box<dyn EmbeddingBackend> = match self.embedder.kind {
            EmbedderKind::Hashed => Box::new(HashedEmbedder::new(self.embedder.dim)),
            EmbedderKind::Http => Box::new(
                HttpEmbedder::from_env(self.embedder.dim)
                    .map_err(|e| anyhow::anyhow!(e.to_string()))?,
            ),
        };
        match &self.adapter {
            None => Ok(base),
            Some(path) => {
                let adapter = LinearAdapter::load(path)
                    .map_err(|e| anyhow::anyhow!("adapter {}: {e}", path.display()))?;
                Ok(Box::new(
                    AdaptedEmbedder::new(base, adapter)
                        .map_err(|e| anyhow::anyhow!(e.to_string()))?,
                ))
            }
        }
    }

    pub fn validate_for_classify(&self) -> Result<()> {
        self.strategy
            .validate()
            .map_err(|e| anyhow::anyhow!(e.to_string()))?;
        if self.in_flight == 0 {
            bail!("in_flight must be at least 1");
        }
        if self.backend == BackendKind::Mock && self.mock_script.is_none() {
            bail!("mock backend needs a `mock_script` path");
        }
        Ok(())
    }
}
