//! Exact inner-product index over the training corpus.
//!
//! Entries are L2-normalized, so inner product equals cosine similarity.
//! Search is a flat scan over every entry (no approximation), sorted by
//! score descending with ties broken by corpus position ascending.
//!
//! On-disk layout produced by [`VectorIndex::save`], given a base path `p`:
//! - `p.json`: header `{"dimension": d, "enriched": bool, "count": n}`
//! - `p.vec`: `n * d` little-endian f32 values, row-major, no framing
//! - `p.meta.jsonl`: one `{"tweet_id", "tweet", "label", "event",
//!   "corpus_position"}` object per entry, in row order

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::corpus::TweetRecord;
use crate::embedding::{EmbeddingBackend, EmbeddingError};
use crate::schema::{EventType, HumanitarianLabel};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("zero-norm vector for tweet id `{0}`")]
    ZeroNormVector(String),
    #[error("query is not L2-normalized (norm = {0})")]
    UnnormalizedQuery(f64),
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

/// Metadata carried alongside each vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub tweet_id: String,
    pub tweet: String,
    pub label: HumanitarianLabel,
    pub event: EventType,
    pub corpus_position: usize,
}

/// A search hit: entry index plus its inner-product score.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub position: usize,
    pub score: f64,
    pub meta: EntryMeta,
}

/// Flat exact-search index with unit-norm rows.
#[derive(Debug)]
pub struct VectorIndex {
    dimension: usize,
    enriched: bool,
    vectors: Vec<Vec<f32>>,
    metas: Vec<EntryMeta>,
}

/// The string a record is embedded as: the raw tweet, or
/// `Label: <label>. Tweet: <tweet>` when label enrichment is on.
pub fn embedded_text(record: &TweetRecord, enriched: bool) -> String {
    if enriched {
        format!("Label: {}. Tweet: {}", record.label, record.tweet)
    } else {
        record.tweet.clone()
    }
}

impl VectorIndex {
    /// Embeds the corpus (optionally label-enriched), L2-normalizes every
    /// vector, and builds the flat index. Corpus order defines positions.
    pub fn build(
        corpus: &[TweetRecord],
        embedder: &dyn EmbeddingBackend,
        enriched: bool,
    ) -> Result<VectorIndex, IndexError> {
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let texts: Vec<String> = corpus.iter().map(|r| embedded_text(r, enriched)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let embeddings = embedder.embed(&refs)?;

        let mut vectors = Vec::with_capacity(corpus.len());
        let mut metas = Vec::with_capacity(corpus.len());
        let dimension = embedder.dimension();
        for (i, (record, mut vector)) in corpus.iter().zip(embeddings).enumerate() {
            if vector.dimension() != dimension {
                return Err(IndexError::DimensionMismatch {
                    expected: dimension,
                    got: vector.dimension(),
                });
            }
            vector
                .normalize()
                .map_err(|_| IndexError::ZeroNormVector(record.tweet_id.clone()))?;
            vectors.push(to_unit_f32(&vector.values));
            metas.push(EntryMeta {
                tweet_id: record.tweet_id.clone(),
                tweet: record.tweet.clone(),
                label: record.label,
                event: record.event_type,
                corpus_position: i,
            });
        }
        Ok(VectorIndex {
            dimension,
            enriched,
            vectors,
            metas,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn enriched(&self) -> bool {
        self.enriched
    }

    pub fn meta(&self, position: usize) -> &EntryMeta {
        &self.metas[position]
    }

    pub fn vector(&self, position: usize) -> &[f32] {
        &self.vectors[position]
    }

    /// Exact top-k by inner product. `k` is clamped to the index size; the
    /// query must be unit-norm (checked within 1e-4).
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>, IndexError> {
        if query.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let qnorm = query.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qnorm - 1.0).abs() > 1e-4 {
            return Err(IndexError::UnnormalizedQuery(qnorm));
        }

        let score = |i: usize| -> (usize, f64) {
            let s: f64 = self.vectors[i]
                .iter()
                .zip(query)
                .map(|(&a, &b)| a as f64 * b)
                .sum();
            (i, s)
        };
        #[cfg(feature = "parallel")]
        let mut scored: Vec<(usize, f64)> =
            (0..self.vectors.len()).into_par_iter().map(score).collect();
        #[cfg(not(feature = "parallel"))]
        let mut scored: Vec<(usize, f64)> = (0..self.vectors.len()).map(score).collect();

        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k.min(self.vectors.len()));
        Ok(scored
            .into_iter()
            .map(|(i, s)| Neighbor {
                position: i,
                score: s,
                meta: self.metas[i].clone(),
            })
            .collect())
    }

    /// Writes the three-file layout described in the module docs.
    pub fn save(&self, base: &Path) -> Result<(), IndexError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source: std::io::Error| IndexError::Io { path, source }
        };

        let header_path = base.with_extension("json");
        let header = serde_json::json!({
            "dimension": self.dimension,
            "enriched": self.enriched,
            "count": self.vectors.len(),
        });
        std::fs::write(&header_path, header.to_string()).map_err(io_err(&header_path))?;

        let vec_path = base.with_extension("vec");
        let mut out =
            std::io::BufWriter::new(std::fs::File::create(&vec_path).map_err(io_err(&vec_path))?);
        for row in &self.vectors {
            for &v in row {
                out.write_all(&v.to_le_bytes()).map_err(io_err(&vec_path))?;
            }
        }
        out.flush().map_err(io_err(&vec_path))?;

        let meta_path = base.with_extension("meta.jsonl");
        let mut out =
            std::io::BufWriter::new(std::fs::File::create(&meta_path).map_err(io_err(&meta_path))?);
        for meta in &self.metas {
            let line = serde_json::to_string(meta).expect("meta serialization cannot fail");
            writeln!(out, "{line}").map_err(io_err(&meta_path))?;
        }
        out.flush().map_err(io_err(&meta_path))
    }

    pub fn load(base: &Path) -> Result<VectorIndex, IndexError> {
        let header_path = base.with_extension("json");
        let header_text =
            std::fs::read_to_string(&header_path).map_err(|source| IndexError::Io {
                path: header_path.clone(),
                source,
            })?;
        #[derive(Deserialize)]
        struct Header {
            dimension: usize,
            enriched: bool,
            count: usize,
        }
        let header: Header =
            serde_json::from_str(&header_text).map_err(|e| IndexError::Format {
                path: header_path.clone(),
                reason: e.to_string(),
            })?;

        let vec_path = base.with_extension("vec");
        let mut bytes = Vec::new();
        std::fs::File::open(&vec_path)
            .map_err(|source| IndexError::Io {
                path: vec_path.clone(),
                source,
            })?
            .read_to_end(&mut bytes)
            .map_err(|source| IndexError::Io {
                path: vec_path.clone(),
                source,
            })?;
        let expected = header.count * header.dimension * 4;
        if bytes.len() != expected {
            return Err(IndexError::Format {
                path: vec_path.clone(),
                reason: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        let mut vectors = Vec::with_capacity(header.count);
        for row in 0..header.count {
            let start = row * header.dimension * 4;
            let values: Vec<f32> = (0..header.dimension)
                .map(|i| {
                    let o = start + i * 4;
                    f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
                })
                .collect();
            vectors.push(values);
        }

        let meta_path = base.with_extension("meta.jsonl");
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|source| IndexError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let metas: Vec<EntryMeta> = meta_text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| IndexError::Format {
                    path: meta_path.clone(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        if metas.len() != header.count {
            return Err(IndexError::Format {
                path: meta_path,
                reason: format!(
                    "expected {} metadata rows, found {}",
                    header.count,
                    metas.len()
                ),
            });
        }

        Ok(VectorIndex {
            dimension: header.dimension,
            enriched: header.enriched,
            vectors,
            metas,
        })
    }
}

/// Casts a unit f64 vector to f32 and renormalizes once in f32 space so the
/// stored rows stay unit within 1e-6 after the precision cut.
fn to_unit_f32(values: &[f64]) -> Vec<f32> {
    let casted: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    let norm = casted
        .iter()
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt();
    casted.iter().map(|&v| (v as f64 / norm) as f32).collect()
}
