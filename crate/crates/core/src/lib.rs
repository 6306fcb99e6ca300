//! Disaster tweet classification pipeline.
//!
//! End to end: raw TSV corpora are normalized into a five-field JSONL
//! format ([`corpus`]); a chat model behind a completions endpoint
//! ([`backend`]) classifies tweets into ten humanitarian categories and four
//! event types under a strict single-JSON-object contract ([`schema`],
//! [`prompting`]); retrieval-augmented strategies draw labeled neighbors
//! from an exact inner-product index ([`vindex`]) over plain or
//! adapter-transformed embeddings ([`embedding`]), gated by model confidence
//! or reranked by arbitration ([`strategies`]); results are scored with full
//! confusion analysis and oracle-correction ceilings ([`eval`]); and
//! [`loraplan`] accounts for low-rank adapter parameter budgets.
//!
//! Data-parallel inner loops (index scans, pairwise cluster metrics, batch
//! classification) run on rayon when the default `parallel` feature is on
//! and fall back to sequential iteration without it.

pub mod backend;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod loraplan;
pub mod prompting;
pub mod rng;
pub mod schema;
pub mod strategies;
pub mod tfidf;
pub mod vindex;

pub use schema::{EventType, HumanitarianLabel, Prediction};
