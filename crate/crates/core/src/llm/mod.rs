//! Chat-completion access: the model trait, an OpenAI-compatible HTTP client,
//! a record/replay cache and test doubles.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub mod client;
pub mod mock;
pub mod mock_server;
pub mod store;

pub use client::{ClientConfig, OpenAiClient};
pub use mock::{CountingModel, ScriptedModel};
pub use mock_server::{MockReply, MockServer};
pub use store::{cache_key, CachedModel, ReplayStore, StoreEntry};

/// Bias applied to each answer letter in constrained mode (the API maximum).
pub const CONSTRAINED_BIAS: i32 = 100;

/// Answer letters used for the constrained single-token mode.
pub const ANSWER_LETTERS: [&str; 5] = ["A", "B", "C", "D", "E"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmParams {
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    /// `None` leaves the response length to the server.
    #[serde(default)]
    pub max_response_tokens: Option<u32>,
    /// Keyed by single characters; mapped to tokenizer ids on the wire.
    #[serde(default)]
    pub logit_bias: Option<BTreeMap<String, i32>>,
}

impl LlmParams {
    pub fn new(model_name: impl Into<String>) -> Self {
        Self { model_name: model_name.into(), temperature: 0.0, max_response_tokens: None, logit_bias: None }
    }

    /// One response token restricted to `A`-`E` with equal bias.
    pub fn constrained(model_name: impl Into<String>) -> Self {
        let bias = ANSWER_LETTERS.iter().map(|l| (l.to_string(), CONSTRAINED_BIAS)).collect();
        Self { max_response_tokens: Some(1), logit_bias: Some(bias), ..Self::new(model_name) }
    }

    pub fn is_constrained(&self) -> bool {
        let Some(bias) = &self.logit_bias else { return false };
        let keys_match = bias.len() == 5 && ANSWER_LETTERS.iter().all(|l| bias.contains_key(*l));
        let values: Vec<_> = bias.values().collect();
        self.max_response_tokens == Some(1) && keys_match && values.windows(2).all(|w| w[0] == w[1]) && *values[0] > 0
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::InvalidParams(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.model_name.trim().is_empty() {
            return Err(LlmError::InvalidParams("model name is empty".into()));
        }
        if let Some(bias) = &self.logit_bias {
            if let Some(bad) = bias.keys().find(|k| k.chars().count() != 1) {
                return Err(LlmError::InvalidParams(format!("logit-bias key {bad:?} is not a single character")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub finish_reason: String,
    #[serde(default)]
    pub usage: Option<Usage>,
    /// Served from the replay store rather than the network.
    #[serde(default)]
    pub cached: bool,
}

impl LlmResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), finish_reason: "stop".into(), usage: None, cached: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Request { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no replay entry for key {0} and network access is disabled")]
    ReplayMiss(String),
    #[error("replay store: {0}")]
    Store(String),
    #[error("{0}")]
    Scripted(String),
}

impl LlmError {
    /// Worth retrying: network failures, timeouts, HTTP 429 and 5xx.
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Transport(_) | Self::Timeout => true,
            Self::Request { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A chat model answering single-turn prompts.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<LlmResponse, LlmError>;

    /// Wire request recorded next to cached responses.
    fn request_body(&self, prompt: &str, params: &LlmParams) -> Value {
        chat_request_body(prompt, params, &default_bias_token_ids())
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<LlmResponse, LlmError> {
        (**self).complete(prompt, params)
    }

    fn request_body(&self, prompt: &str, params: &LlmParams) -> Value {
        (**self).request_body(prompt, params)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Arc<M> {
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<LlmResponse, LlmError> {
        (**self).complete(prompt, params)
    }

    fn request_body(&self, prompt: &str, params: &LlmParams) -> Value {
        (**self).request_body(prompt, params)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<LlmResponse, LlmError> {
        (**self).complete(prompt, params)
    }

    fn request_body(&self, prompt: &str, params: &LlmParams) -> Value {
        (**self).request_body(prompt, params)
    }
}

/// Token ids of `A`-`E` in the `cl100k_base` vocabulary (gpt-3.5/gpt-4).
pub fn default_bias_token_ids() -> BTreeMap<String, String> {
    ANSWER_LETTERS.iter().zip(32..).map(|(l, id)| (l.to_string(), id.to_string())).collect()
}

/// OpenAI chat-completion request body with a single user message.
/// Characters without a token-id mapping are sent as-is.
pub fn chat_request_body(prompt: &str, params: &LlmParams, bias_token_ids: &BTreeMap<String, String>) -> Value {
    let mut body = json!({
        "model": params.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
    });
    if let Some(max) = params.max_response_tokens {
        body["max_tokens"] = json!(max);
    }
    if let Some(bias) = &params.logit_bias {
        let mapped: serde_json::Map<String, Value> = bias
            .iter()
            .map(|(ch, value)| (bias_token_ids.get(ch).cloned().unwrap_or_else(|| ch.clone()), json!(value)))
            .collect();
        body["logit_bias"] = Value::Object(mapped);
    }
    body
}
