//! In-process test doubles.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{LanguageModel, LlmError, LlmParams, LlmResponse};

type Responder = dyn Fn(&str, &LlmParams) -> Result<String, LlmError> + Send + Sync;

/// Replies computed by a closure over the prompt.
pub struct ScriptedModel {
    responder: Box<Responder>,
}

impl ScriptedModel {
    pub fn new(responder: impl Fn(&str, &LlmParams) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        Self { responder: Box::new(responder) }
    }

    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_, _| Ok(text.clone()))
    }

    /// Replies in order; errors once the script runs out.
    pub fn sequence(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let queue = Mutex::new(replies.into_iter().map(Into::into).collect::<VecDeque<String>>());
        Self::new(move |_, _| {
            queue
                .lock()
                .expect("script lock")
                .pop_front()
                .ok_or_else(|| LlmError::Scripted("script exhausted".into()))
        })
    }

    pub fn failing(message: impl Into<String>) -> Self {
        let message = message.into();
        Self::new(move |_, _| Err(LlmError::Scripted(message.clone())))
    }
}

impl LanguageModel for ScriptedModel {
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<LlmResponse, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        (self.responder)(prompt, params).map(LlmResponse::text)
    }
}

/// Counts calls and keeps every prompt it was sent.
pub struct CountingModel<M> {
    inner: M,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl<M: LanguageModel> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, calls: AtomicUsize::new(0), prompts: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log lock").clone()
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.prompts.lock().expect("prompt log lock").clear();
    }
}

impl<M: LanguageModel> LanguageModel for CountingModel<M> {
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<LlmResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().expect("prompt log lock").push(prompt.to_owned());
        self.inner.complete(prompt, params)
    }

    fn request_body(&self, prompt: &str, params: &LlmParams) -> serde_json::Value {
        self.inner.request_body(prompt, params)
    }
}
