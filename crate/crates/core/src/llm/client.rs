//! Blocking OpenAI-compatible chat-completion client.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{chat_request_body, default_bias_token_ids, LanguageModel, LlmError, LlmParams, LlmResponse, Usage};

fn default_base_url() -> String {
    "https://api.openai.com/v1".into()
}
fn default_model() -> String {
    "gpt-3.5-turbo".into()
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    5
}
fn default_concurrency() -> usize {
    4
}
fn default_rpm() -> u32 {
    60
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_model")]
    pub model_name: String,
    /// Environment variable holding the API key; unset means no auth header.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
    /// Character -> tokenizer id, used to encode logit bias.
    #[serde(default = "default_bias_token_ids")]
    pub bias_token_ids: BTreeMap<String, String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: default_base_url(),
            model_name: default_model(),
            api_key_env: default_api_key_env(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            max_concurrency: default_concurrency(),
            requests_per_minute: default_rpm(),
            initial_backoff_ms: default_backoff(),
            bias_token_ids: default_bias_token_ids(),
        }
    }
}

/// Token bucket refilled at `rate` tokens per second.
struct TokenBucket {
    capacity: f64,
    tokens: f64,
    rate: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(requests_per_minute: u32, burst: usize) -> Self {
        let capacity = burst.max(1) as f64;
        Self { capacity, tokens: capacity, rate: f64::from(requests_per_minute.max(1)) / 60.0, last: Instant::now() }
    }

    /// Takes a token, or returns how long to wait for one.
    fn try_take(&mut self) -> Result<(), Duration> {
        let now = Instant::now();
        self.tokens = (self.tokens + now.duration_since(self.last).as_secs_f64() * self.rate).min(self.capacity);
        self.last = now;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - self.tokens) / self.rate))
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Slots {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cond.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cond.notify_one();
    }
}

pub struct OpenAiClient {
    config: ClientConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    bucket: Mutex<TokenBucket>,
    slots: Slots,
}

impl OpenAiClient {
    pub fn new(config: ClientConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: ClientConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let bucket = Mutex::new(TokenBucket::new(config.requests_per_minute, config.max_concurrency));
        let slots = Slots { free: Mutex::new(config.max_concurrency.max(1)), cond: Condvar::new() };
        Self { config, agent, api_key, bucket, slots }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn wait_for_rate_limit(&self) {
        loop {
            let wait = self.bucket.lock().expect("rate limiter lock").try_take();
            match wait {
                Ok(()) => return,
                Err(delay) => thread::sleep(delay),
            }
        }
    }

    fn send_once(&self, body: &Value) -> Result<LlmResponse, LlmError> {
        self.wait_for_rate_limit();
        let _slot = self.slots.acquire();
        let mut request = self.agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(map_transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_transport)?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Request { status, body: text });
        }
        parse_completion(&text)
    }
}

fn map_transport(err: ureq::Error) -> LlmError {
    match err {
        ureq::Error::Timeout(_) => LlmError::Timeout,
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => LlmError::Timeout,
        other => LlmError::Transport(other.to_string()),
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Parses an OpenAI chat-completion response body.
pub fn parse_completion(body: &str) -> Result<LlmResponse, LlmError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let choice = wire.choices.into_iter().next().ok_or_else(|| LlmError::Malformed("no choices".into()))?;
    Ok(LlmResponse {
        text: choice.message.content.unwrap_or_default(),
        finish_reason: choice.finish_reason.unwrap_or_default(),
        usage: wire.usage,
        cached: false,
    })
}

impl LanguageModel for OpenAiClient {
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<LlmResponse, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        params.validate()?;
        let body = self.request_body(prompt, params);
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Ok(response) => return Ok(response),
                Err(err) if err.is_transient() && attempt < self.config.max_retries => {
                    attempt += 1;
                    log::warn!("attempt {attempt} failed ({err}); retrying in {backoff:?}");
                    thread::sleep(backoff);
                    backoff = (backoff * 2).min(Duration::from_secs(60));
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn request_body(&self, prompt: &str, params: &LlmParams) -> Value {
        chat_request_body(prompt, params, &self.config.bias_token_ids)
    }
}
