//! Chat-completion backends.
//!
//! [`HttpBackend`] speaks the common chat-completions wire protocol
//! (`POST {base}/v1/chat/completions` with `model`, `messages`,
//! `temperature`, `top_p`, `max_tokens`, `logprobs`), so base and fine-tuned
//! endpoints are interchangeable. [`ScriptedBackend`] replays a canned
//! completion queue and records every request; it performs no I/O at all and
//! is the deterministic stand-in used throughout the test suites.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::ChatMessage;

/// Environment variables the HTTP backend reads.
pub const ENV_BASE_URL: &str = "CRISIS_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "CRISIS_LLM_API_KEY";
pub const ENV_MODEL: &str = "CRISIS_LLM_MODEL";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("environment variable {0} is not set")]
    AuthMissing(&'static str),
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("server returned HTTP {code}")]
    HttpStatus { code: u16 },
    #[error("response missing expected field: {0}")]
    ProtocolShape(String),
    #[error("message list is empty")]
    EmptyMessages,
    #[error("scripted backend exhausted after {served} completions")]
    ScriptExhausted { served: usize },
    #[error("transport error: {0}")]
    Transport(String),
}

/// Decoding parameters sent with every request. Defaults are deterministic
/// greedy decoding with a 50-token budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub logprobs: bool,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 50,
            logprobs: false,
        }
    }
}

impl DecodingConfig {
    pub fn with_logprobs(mut self) -> Self {
        self.logprobs = true;
        self
    }
}

/// Token usage reported by the server (zeros when unknown).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One model completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub token_logprobs: Option<Vec<f64>>,
    pub usage: Usage,
}

/// A chat-completion service.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        config: &DecodingConfig,
    ) -> Result<Completion, BackendError>;
}

// ---------------------------------------------------------------------------
// HTTP client
// ---------------------------------------------------------------------------

pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
    max_attempts: u32,
    backoff: Duration,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    logprobs: bool,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: MessageBody,
    #[serde(default)]
    logprobs: Option<LogprobsBody>,
}

#[derive(Deserialize)]
struct MessageBody {
    content: String,
}

#[derive(Deserialize)]
struct LogprobsBody {
    #[serde(default)]
    content: Vec<TokenLogprob>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    logprob: f64,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackend {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("default client"),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }

    /// Reads `CRISIS_LLM_BASE_URL`, `CRISIS_LLM_MODEL`, and (optionally)
    /// `CRISIS_LLM_API_KEY`. Credentials travel only through the
    /// environment, never through flags.
    pub fn from_env() -> Result<Self, BackendError> {
        let base_url =
            std::env::var(ENV_BASE_URL).map_err(|_| BackendError::AuthMissing(ENV_BASE_URL))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| BackendError::AuthMissing(ENV_MODEL))?;
        let mut backend = HttpBackend::new(base_url, model);
        backend.api_key = std::env::var(ENV_API_KEY).ok();
        Ok(backend)
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    /// Overrides the retry policy (tests use a tiny backoff).
    pub fn with_retry(mut self, max_attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    fn attempt(
        &self,
        messages: &[ChatMessage],
        config: &DecodingConfig,
    ) -> Result<Completion, AttemptError> {
        let url = format!(
            "{}/v1/chat/completions",
            self.base_url.trim_end_matches('/')
        );
        let body = ChatRequest {
            model: &self.model,
            messages,
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_tokens,
            logprobs: config.logprobs,
        };
        let mut request = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Retryable(BackendError::Timeout { attempts: 0 })
            } else {
                AttemptError::Retryable(BackendError::Transport(e.to_string()))
            }
        })?;

        let status = response.status();
        if !status.is_success() {
            let err = BackendError::HttpStatus {
                code: status.as_u16(),
            };
            // 5xx and 429 are worth retrying; other client errors are not.
            return if status.is_server_error() || status.as_u16() == 429 {
                Err(AttemptError::Retryable(err))
            } else {
                Err(AttemptError::Fatal(err))
            };
        }

        let parsed: ChatResponse = response
            .json()
            .map_err(|e| AttemptError::Fatal(BackendError::ProtocolShape(e.to_string())))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or(AttemptError::Fatal(BackendError::ProtocolShape(
                "choices[0]".into(),
            )))?;
        let token_logprobs = choice
            .logprobs
            .map(|l| {
                l.content
                    .into_iter()
                    .map(|t| t.logprob)
                    .collect::<Vec<f64>>()
            })
            .filter(|v| !v.is_empty());
        let usage = parsed
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(Completion {
            text: choice.message.content,
            token_logprobs,
            usage,
        })
    }
}

enum AttemptError {
    Retryable(BackendError),
    Fatal(BackendError),
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        messages: &[ChatMessage],
        config: &DecodingConfig,
    ) -> Result<Completion, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::EmptyMessages);
        }
        let mut last = BackendError::Timeout {
            attempts: self.max_attempts,
        };
        for attempt in 0..self.max_attempts {
            match self.attempt(messages, config) {
                Ok(completion) => return Ok(completion),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(e)) => {
                    last = match e {
                        BackendError::Timeout { .. } => BackendError::Timeout {
                            attempts: attempt + 1,
                        },
                        other => other,
                    };
                    if attempt + 1 < self.max_attempts {
                        std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(last)
    }
}

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

/// One canned reply: completion text plus optional token logprobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub text: String,
    pub token_logprobs: Option<Vec<f64>>,
}

impl ScriptEntry {
    pub fn text_only(text: impl Into<String>) -> Self {
        ScriptEntry {
            text: text.into(),
            token_logprobs: None,
        }
    }

    pub fn with_logprobs(text: impl Into<String>, logprobs: Vec<f64>) -> Self {
        ScriptEntry {
            text: text.into(),
            token_logprobs: Some(logprobs),
        }
    }
}

/// A request the mock has served, kept for golden-transcript assertions.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub messages: Vec<ChatMessage>,
    pub config: DecodingConfig,
}

/// Replays a fixed script in FIFO order and records every request. Serving
/// order equals call order, so scripts map one-to-one onto requests only
/// when calls are issued sequentially; parallel drivers give each sample its
/// own backend instance instead.
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

struct ScriptState {
    queue: std::collections::VecDeque<ScriptEntry>,
    served: usize,
    requests: Vec<RecordedRequest>,
}

/// Builds a scripted mock from (text, logprobs) entries.
pub fn scripted_mock(script: Vec<ScriptEntry>) -> ScriptedBackend {
    ScriptedBackend {
        state: Mutex::new(ScriptState {
            queue: script.into(),
            served: 0,
            requests: Vec::new(),
        }),
    }
}

impl ScriptedBackend {
    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn served(&self) -> usize {
        self.state.lock().unwrap().served
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(
        &self,
        messages: &[ChatMessage],
        config: &DecodingConfig,
    ) -> Result<Completion, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::EmptyMessages);
        }
        let mut state = self.state.lock().unwrap();
        state.requests.push(RecordedRequest {
            messages: messages.to_vec(),
            config: config.clone(),
        });
        let entry = state
            .queue
            .pop_front()
            .ok_or(BackendError::ScriptExhausted {
                served: state.served,
            })?;
        state.served += 1;
        Ok(Completion {
            text: entry.text,
            token_logprobs: entry.token_logprobs,
            usage: Usage::default(),
        })
    }
}
