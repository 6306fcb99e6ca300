//! Classification strategies against a chat backend.
//!
//! Five modes: plain zero-shot, few-shot with prepended demonstrations,
//! standard retrieval augmentation (retrieve for every sample), adaptive
//! retrieval (retrieve only when the phase-1 confidence falls below a
//! threshold), and hybrid arbitration (always re-infer, but rerank the
//! retrieved neighbors against the phase-1 prediction first).
//!
//! Confidence is the geometric mean token probability of the completion,
//! `exp(mean(logprobs))`; it is length-robust and monotone in per-token
//! certainty.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, Completion, DecodingConfig};
use crate::embedding::{EmbeddingBackend, EmbeddingError};
use crate::prompting::{
    build_few_shot, build_zero_shot, ChatMessage, Demonstration, PromptError, ZERO_SHOT_SYSTEM,
};
use crate::schema::{
    format_prediction_json, parse_prediction, HumanitarianLabel, ParseViolation, Prediction,
};
use crate::vindex::{IndexError, Neighbor, VectorIndex};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("prompt needs {needed} tokens but the budget is {budget}")]
    ContextOverflow { needed: usize, budget: usize },
    #[error("backend returned no token logprobs and no fallback confidence is configured")]
    MissingLogprobs,
    #[error("logprob list is empty")]
    EmptyLogprobs,
    #[error("logprob {0} is not a finite non-positive value")]
    InvalidLogprob(f64),
    #[error("retrieval returned no neighbors")]
    EmptyNeighbors,
    #[error("invalid strategy config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyMode {
    ZeroShot,
    FewShot,
    RagStandard,
    RagAdaptive,
    RagHybrid,
}

/// What to do when adaptive inference needs a confidence but the backend
/// returned no logprobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "confidence")]
pub enum MissingLogprobPolicy {
    Error,
    Assume(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub mode: StrategyMode,
    /// Retrieved-neighbor / demonstration count for the RAG modes.
    pub k: usize,
    /// Confidence threshold for adaptive retrieval; phase 2 runs iff the
    /// phase-1 confidence is strictly below it.
    pub tau: f64,
    /// Prompt budget in approximate tokens (whitespace tokens x 1.3).
    pub max_context_tokens: usize,
    pub missing_logprob_policy: MissingLogprobPolicy,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            mode: StrategyMode::ZeroShot,
            k: 3,
            tau: 0.9,
            max_context_tokens: 4096,
            missing_logprob_policy: MissingLogprobPolicy::Error,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), StrategyError> {
        if self.k == 0 {
            return Err(StrategyError::InvalidConfig("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(StrategyError::InvalidConfig(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        if self.max_context_tokens == 0 {
            return Err(StrategyError::InvalidConfig(
                "context budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Compact neighbor summary kept in outcomes for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRef {
    pub corpus_position: usize,
    pub score: f64,
    pub label: HumanitarianLabel,
}

impl From<&Neighbor> for NeighborRef {
    fn from(n: &Neighbor) -> Self {
        NeighborRef {
            corpus_position: n.meta.corpus_position,
            score: n.score,
            label: n.meta.label,
        }
    }
}

/// Result of classifying one tweet.
#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub prediction: Result<Prediction, ParseViolation>,
    /// Raw text of the completion the final prediction was parsed from.
    pub raw: String,
    pub rag_triggered: bool,
    pub phase1_confidence: Option<f64>,
    pub neighbors_used: Vec<NeighborRef>,
}

impl StrategyOutcome {
    fn from_completion(completion: &Completion) -> Self {
        let mut prediction = parse_prediction(&completion.text);
        if let (Ok(p), Some(logprobs)) = (&mut prediction, &completion.token_logprobs) {
            p.confidence = confidence_from_logprobs(logprobs).ok();
        }
        StrategyOutcome {
            prediction,
            raw: completion.text.clone(),
            rag_triggered: false,
            phase1_confidence: None,
            neighbors_used: Vec::new(),
        }
    }
}

/// Geometric mean token probability: `exp(mean(logprobs))`, in (0, 1].
pub fn confidence_from_logprobs(token_logprobs: &[f64]) -> Result<f64, StrategyError> {
    if token_logprobs.is_empty() {
        return Err(StrategyError::EmptyLogprobs);
    }
    for &lp in token_logprobs {
        if !lp.is_finite() || lp > 0.0 {
            return Err(StrategyError::InvalidLogprob(lp));
        }
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok(mean.exp())
}

/// Approximate token count: whitespace tokens times a 1.3 safety factor,
/// rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    (text.split_whitespace().count() as f64 * 1.3).ceil() as usize
}

fn estimate_messages(messages: &[ChatMessage]) -> usize {
    messages.iter().map(|m| estimate_tokens(&m.content)).sum()
}

/// Builds the retrieval-augmented prompt: zero-shot system message plus one
/// user message that lists each neighbor as a Tweet/JSON pair and ends with
/// the query tweet. Neighbors are dropped from the tail of the list until
/// the prompt fits the token budget; the query itself is never truncated.
pub fn assemble_rag_prompt(
    neighbors: &[Neighbor],
    tweet: &str,
    max_context_tokens: usize,
) -> Result<Vec<ChatMessage>, StrategyError> {
    if neighbors.is_empty() {
        return Err(StrategyError::EmptyNeighbors);
    }
    let mut keep = neighbors.len();
    loop {
        let messages = rag_messages(&neighbors[..keep], tweet);
        let needed = estimate_messages(&messages);
        if needed <= max_context_tokens {
            return Ok(messages);
        }
        if keep == 1 {
            return Err(StrategyError::ContextOverflow {
                needed,
                budget: max_context_tokens,
            });
        }
        keep -= 1;
    }
}

fn rag_messages(neighbors: &[Neighbor], tweet: &str) -> Vec<ChatMessage> {
    let mut user = String::from("Here are some similar examples for reference:\n");
    for n in neighbors {
        user.push_str(&format!(
            "\nTweet: \"{}\"\nJSON: {}\n",
            n.meta.tweet,
            format_prediction_json(n.meta.label, n.meta.event)
        ));
    }
    user.push_str(&format!("\nTweet: \"{tweet}\""));
    vec![
        ChatMessage::system(ZERO_SHOT_SYSTEM),
        ChatMessage::user(user),
    ]
}

/// Reranks retrieved neighbors against the phase-1 prediction:
/// 1. if any neighbor carries the phase-1 label, return the first `k` such
///    supporters;
/// 2. otherwise, if the most common neighbor label covers at least half the
///    list, return the first `k` entries with that label (ties between
///    equally common labels go to the lexicographically smallest);
/// 3. otherwise keep the original top `k`.
///
/// Relative order within the selected subset is always preserved.
pub fn rerank_hybrid(neighbors: &[Neighbor], phase1: HumanitarianLabel, k: usize) -> Vec<Neighbor> {
    let supporters: Vec<Neighbor> = neighbors
        .iter()
        .filter(|n| n.meta.label == phase1)
        .take(k)
        .cloned()
        .collect();
    if !supporters.is_empty() {
        return supporters;
    }

    let mut counts: std::collections::BTreeMap<HumanitarianLabel, usize> =
        std::collections::BTreeMap::new();
    for n in neighbors {
        *counts.entry(n.meta.label).or_default() += 1;
    }
    // BTreeMap iterates labels in ascending order, so `>` keeps the smallest
    // label among equally common ones.
    let (dominant, count) = counts.iter().fold((None, 0usize), |best, (&label, &c)| {
        if c > best.1 {
            (Some(label), c)
        } else {
            best
        }
    });
    if let Some(dominant) = dominant {
        if 2 * count >= neighbors.len() {
            return neighbors
                .iter()
                .filter(|n| n.meta.label == dominant)
                .take(k)
                .cloned()
                .collect();
        }
    }

    neighbors.iter().take(k).cloned().collect()
}

/// Zero-shot classification: constrained prompt, no demonstrations.
pub fn classify_zero_shot(
    tweet: &str,
    backend: &dyn ChatBackend,
    decoding: &DecodingConfig,
) -> Result<StrategyOutcome, StrategyError> {
    let messages = build_zero_shot(tweet)?;
    let completion = backend.complete(&messages, decoding)?;
    Ok(StrategyOutcome::from_completion(&completion))
}

/// Few-shot classification with a prepared demonstration list.
pub fn classify_few_shot(
    tweet: &str,
    demos: &[Demonstration],
    backend: &dyn ChatBackend,
    decoding: &DecodingConfig,
) -> Result<StrategyOutcome, StrategyError> {
    let messages = build_few_shot(demos, tweet)?;
    let completion = backend.complete(&messages, decoding)?;
    Ok(StrategyOutcome::from_completion(&completion))
}

fn retrieve(
    tweet: &str,
    index: &VectorIndex,
    embedder: &dyn EmbeddingBackend,
    k: usize,
) -> Result<Vec<Neighbor>, StrategyError> {
    let mut query = embedder.embed(&[tweet])?.remove(0);
    query.normalize()?;
    Ok(index.search(&query.values, k)?)
}

/// Standard retrieval augmentation: every sample retrieves its top-k
/// neighbors and classifies with them in context.
pub fn classify_standard_rag(
    tweet: &str,
    index: &VectorIndex,
    embedder: &dyn EmbeddingBackend,
    backend: &dyn ChatBackend,
    config: &StrategyConfig,
) -> Result<StrategyOutcome, StrategyError> {
    config.validate()?;
    let neighbors = retrieve(tweet, index, embedder, config.k)?;
    let messages = assemble_rag_prompt(&neighbors, tweet, config.max_context_tokens)?;
    let completion = backend.complete(&messages, &DecodingConfig::default())?;
    let mut outcome = StrategyOutcome::from_completion(&completion);
    outcome.rag_triggered = true;
    outcome.neighbors_used = neighbors.iter().map(NeighborRef::from).collect();
    Ok(outcome)
}

/// Adaptive retrieval: direct inference first; retrieval and re-inference
/// only when the phase-1 confidence falls below `tau`.
pub fn classify_adaptive(
    tweet: &str,
    index: &VectorIndex,
    embedder: &dyn EmbeddingBackend,
    backend: &dyn ChatBackend,
    config: &StrategyConfig,
) -> Result<StrategyOutcome, StrategyError> {
    config.validate()?;
    let messages = build_zero_shot(tweet)?;
    let phase1 = backend.complete(&messages, &DecodingConfig::default().with_logprobs())?;
    let confidence = match &phase1.token_logprobs {
        Some(logprobs) => confidence_from_logprobs(logprobs)?,
        None => match config.missing_logprob_policy {
            MissingLogprobPolicy::Assume(c) => c,
            MissingLogprobPolicy::Error => return Err(StrategyError::MissingLogprobs),
        },
    };

    if confidence < config.tau {
        let neighbors = retrieve(tweet, index, embedder, config.k)?;
        let messages = assemble_rag_prompt(&neighbors, tweet, config.max_context_tokens)?;
        let completion = backend.complete(&messages, &DecodingConfig::default())?;
        let mut outcome = StrategyOutcome::from_completion(&completion);
        outcome.rag_triggered = true;
        outcome.phase1_confidence = Some(confidence);
        outcome.neighbors_used = neighbors.iter().map(NeighborRef::from).collect();
        Ok(outcome)
    } else {
        let mut outcome = StrategyOutcome::from_completion(&phase1);
        if let Ok(p) = &mut outcome.prediction {
            p.confidence = Some(confidence);
        }
        outcome.phase1_confidence = Some(confidence);
        Ok(outcome)
    }
}

/// Hybrid arbitration: phase-1 prediction, neighbor reranking against it,
/// then unconditional re-inference with the reranked examples.
pub fn classify_hybrid(
    tweet: &str,
    index: &VectorIndex,
    embedder: &dyn EmbeddingBackend,
    backend: &dyn ChatBackend,
    config: &StrategyConfig,
) -> Result<StrategyOutcome, StrategyError> {
    config.validate()?;
    let messages = build_zero_shot(tweet)?;
    let phase1 = backend.complete(&messages, &DecodingConfig::default())?;
    let phase1_label = parse_prediction(&phase1.text).ok().map(|p| p.humanitarian);

    let neighbors = retrieve(tweet, index, embedder, config.k)?;
    // An unparseable phase 1 gives the arbitration nothing to arbitrate
    // against; the original ranking is the fallback.
    let reranked = match phase1_label {
        Some(label) => rerank_hybrid(&neighbors, label, config.k),
        None => neighbors.clone(),
    };
    let messages = assemble_rag_prompt(&reranked, tweet, config.max_context_tokens)?;
    let completion = backend.complete(&messages, &DecodingConfig::default())?;
    let mut outcome = StrategyOutcome::from_completion(&completion);
    outcome.rag_triggered = true;
    outcome.neighbors_used = reranked.iter().map(NeighborRef::from).collect();
    Ok(outcome)
}

/// Fraction of outcomes that triggered retrieval.
pub fn trigger_rate(outcomes: &[StrategyOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.rag_triggered).count() as f64 / outcomes.len() as f64
}

/// Runs `f` over every item with at most `in_flight` items being processed
/// concurrently, returning results in input order regardless of completion
/// order. With the `parallel` feature disabled this degrades to a plain
/// sequential map.
#[cfg(feature = "parallel")]
pub fn run_batch<T, R, F>(items: &[T], in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(in_flight.max(1))
        .build()
        .expect("thread pool construction");
    pool.install(|| {
        items
            .par_iter()
            .enumerate()
            .map(|(i, item)| f(i, item))
            .collect()
    })
}

#[cfg(not(feature = "parallel"))]
pub fn run_batch<T, R, F>(items: &[T], _in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    items
        .iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}

/// JSONL line format for experiment outcomes ("one outcome per line,
/// including the raw completion, for audit").
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub tweet_id: String,
    pub mode: StrategyMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub prediction: Option<PredictionFields>,
    pub parse_error: Option<ParseViolation>,
    pub raw: String,
    pub rag_triggered: bool,
    pub phase1_confidence: Option<f64>,
    pub neighbors: Vec<NeighborRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionFields {
    pub humanitarian_label: HumanitarianLabel,
    pub event_type: crate::schema::EventType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl OutcomeRecord {
    pub fn new(tweet_id: impl Into<String>, mode: StrategyMode, outcome: &StrategyOutcome) -> Self {
        let (prediction, parse_error) = match &outcome.prediction {
            Ok(p) => (
                Some(PredictionFields {
                    humanitarian_label: p.humanitarian,
                    event_type: p.event,
                    confidence: p.confidence,
                }),
                None,
            ),
            Err(e) => (None, Some(e.clone())),
        };
        OutcomeRecord {
            tweet_id: tweet_id.into(),
            mode,
            config_hash: None,
            seed: None,
            prediction,
            parse_error,
            raw: outcome.raw.clone(),
            rag_triggered: outcome.rag_triggered,
            phase1_confidence: outcome.phase1_confidence,
            neighbors: outcome.neighbors_used.clone(),
        }
    }

    /// Reconstructs the scoring view of this record.
    pub fn to_result(&self) -> Result<Prediction, ParseViolation> {
        match (&self.prediction, &self.parse_error) {
            (Some(p), _) => Ok(Prediction {
                humanitarian: p.humanitarian_label,
                event: p.event_type,
                raw: self.raw.clone(),
                confidence: p.confidence,
            }),
            (None, Some(e)) => Err(e.clone()),
            (None, None) => Err(ParseViolation::Format {
                detail: "record carries neither prediction nor parse_error".into(),
            }),
        }
    }
}
