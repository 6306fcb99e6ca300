//! Prompt construction and demonstration selection.
//!
//! The zero-shot system prompt is a fixed constant: it enumerates the full
//! humanitarian label set, the four event types, and demands a single JSON
//! object with no explanation. Few-shot prompts prepend labeled
//! demonstrations as alternating user/assistant turns whose assistant
//! content is the exact answer object, so every demonstration parses back
//! through the strict output contract.
//!
//! Demonstrations come from three strategies: a user-supplied manual list,
//! static stratified sampling over the humanitarian labels, and dynamic
//! retrieval by TF-IDF cosine similarity.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TweetRecord;
use crate::rng::SplitMix64;
use crate::schema::{format_prediction_json, EventType, HumanitarianLabel};
use crate::tfidf::TfidfModel;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("tweet text is empty")]
    EmptyTweet,
    #[error("demonstration list is empty")]
    EmptyDemos,
    #[error("k = {k} exceeds the {n} available training records")]
    KTooLarge { k: usize, n: usize },
    #[error("manual demonstration file {path}: {reason}")]
    ManualDemos { path: String, reason: String },
}

/// One chat turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A labeled example shown to the model before the test tweet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub tweet: String,
    pub humanitarian: HumanitarianLabel,
    pub event: EventType,
}

impl From<&TweetRecord> for Demonstration {
    fn from(record: &TweetRecord) -> Self {
        Demonstration {
            tweet: record.tweet.clone(),
            humanitarian: record.label,
            event: record.event_type,
        }
    }
}

/// How demonstrations are chosen for few-shot prompting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotStrategy {
    Manual,
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShotConfig {
    pub k: usize,
    pub strategy: ShotStrategy,
    pub seed: u64,
}

impl Default for ShotConfig {
    fn default() -> Self {
        ShotConfig {
            k: 10,
            strategy: ShotStrategy::Static,
            seed: 0,
        }
    }
}

/// System prompt used for zero-shot and retrieval-augmented classification.
pub const ZERO_SHOT_SYSTEM: &str = "\
You are an expert disaster tweet classifier.
You must classify each tweet into TWO fields:

1) Humanitarian Label (choose exactly ONE):
caution_and_advice,
displaced_people_and_evacuations,
infrastructure_and_utility_damage,
injured_or_dead_people,
missing_or_found_people,
not_humanitarian,
other_relevant_information,
requests_or_urgent_needs,
rescue_volunteering_or_donation_effort,
sympathy_and_support

2) Event Type (choose exactly ONE):
earthquake, fire, flood, hurricane

Return ONLY ONE JSON object. No explanation.
Use this EXACT format:
{\"humanitarian_label\": \"...\", \"event_type\": \"...\"}";

/// System prompt for chat-style few-shot classification; same constraints as
/// the zero-shot prompt, condensed for the multi-turn layout.
pub const FEW_SHOT_SYSTEM: &str = "\
You are an expert disaster tweet classifier.
Classify each tweet into TWO fields and return ONLY ONE JSON object. No explanation.
Humanitarian Label (choose 1): caution_and_advice, displaced_people_and_evacuations, infrastructure_and_utility_damage, injured_or_dead_people, missing_or_found_people, not_humanitarian, other_relevant_information, requests_or_urgent_needs, rescue_volunteering_or_donation_effort, sympathy_and_support
Event Type (choose 1): earthquake, fire, flood, hurricane";

/// Builds the two-message zero-shot prompt.
pub fn build_zero_shot(tweet: &str) -> Result<Vec<ChatMessage>, PromptError> {
    if tweet.trim().is_empty() {
        return Err(PromptError::EmptyTweet);
    }
    Ok(vec![
        ChatMessage::system(ZERO_SHOT_SYSTEM),
        ChatMessage::user(format!("Tweet: {tweet}")),
    ])
}

/// Builds the chat-style few-shot prompt: system, then one user/assistant
/// pair per demonstration in the given order, then the test tweet.
pub fn build_few_shot(
    demos: &[Demonstration],
    tweet: &str,
) -> Result<Vec<ChatMessage>, PromptError> {
    if demos.is_empty() {
        return Err(PromptError::EmptyDemos);
    }
    if tweet.trim().is_empty() {
        return Err(PromptError::EmptyTweet);
    }
    let mut messages = Vec::with_capacity(2 * demos.len() + 2);
    messages.push(ChatMessage::system(FEW_SHOT_SYSTEM));
    for demo in demos {
        messages.push(ChatMessage::user(format!("Tweet: \"{}\"", demo.tweet)));
        messages.push(ChatMessage::assistant(format_prediction_json(
            demo.humanitarian,
            demo.event,
        )));
    }
    messages.push(ChatMessage::user(format!("Tweet: \"{tweet}\"")));
    Ok(messages)
}

/// Static stratified selection: walk the humanitarian labels in canonical
/// (alphabetical) order taking one uniform draw from each non-empty label
/// until `k` examples are collected, then top up uniformly from the records
/// not yet chosen. Draws use the seeded splitmix64 stream with indices taken
/// as `next_u64() % n` over candidate lists in corpus order, so the selection
/// is reproducible from the seed alone.
pub fn select_static_stratified(
    train: &[TweetRecord],
    k: usize,
    seed: u64,
) -> Result<Vec<Demonstration>, PromptError> {
    if k > train.len() {
        return Err(PromptError::KTooLarge { k, n: train.len() });
    }
    let mut rng = SplitMix64::new(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut taken = vec![false; train.len()];

    for label in HumanitarianLabel::ALL {
        if chosen.len() >= k {
            break;
        }
        let pool: Vec<usize> = (0..train.len())
            .filter(|&i| !taken[i] && train[i].label == label)
            .collect();
        if pool.is_empty() {
            continue;
        }
        let pick = pool[rng.index(pool.len())];
        taken[pick] = true;
        chosen.push(pick);
    }

    while chosen.len() < k {
        let pool: Vec<usize> = (0..train.len()).filter(|&i| !taken[i]).collect();
        let pick = pool[rng.index(pool.len())];
        taken[pick] = true;
        chosen.push(pick);
    }

    Ok(chosen
        .iter()
        .map(|&i| Demonstration::from(&train[i]))
        .collect())
}

/// Dynamic selection: top-k training records by TF-IDF cosine similarity to
/// the query, ties broken by lower corpus position. The model must have been
/// fitted on `train` in the same order.
pub fn select_dynamic(
    query: &str,
    train: &[TweetRecord],
    k: usize,
    tfidf: &TfidfModel,
) -> Result<Vec<Demonstration>, PromptError> {
    if k > train.len() {
        return Err(PromptError::KTooLarge { k, n: train.len() });
    }
    let ranked = tfidf.cosine_topk(query, k);
    Ok(ranked
        .iter()
        .map(|&(i, _)| Demonstration::from(&train[i]))
        .collect())
}

/// Loads a manual demonstration list from a JSONL file of
/// `{"tweet": ..., "humanitarian": ..., "event": ...}` objects.
pub fn load_manual_demos(path: &Path) -> Result<Vec<Demonstration>, PromptError> {
    let text = std::fs::read_to_string(path).map_err(|e| PromptError::ManualDemos {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut demos = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let demo: Demonstration =
            serde_json::from_str(line).map_err(|e| PromptError::ManualDemos {
                path: path.display().to_string(),
                reason: format!("line {}: {e}", i + 1),
            })?;
        demos.push(demo);
    }
    if demos.is_empty() {
        return Err(PromptError::ManualDemos {
            path: path.display().to_string(),
            reason: "file contains no demonstrations".into(),
        });
    }
    Ok(demos)
}
