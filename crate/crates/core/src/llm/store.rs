//! Append-only JSONL record/replay cache for model calls.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{LanguageModel, LlmError, LlmParams, LlmResponse};

#[derive(Serialize)]
struct KeyMaterial<'a> {
    prompt: &'a str,
    temperature: f64,
    max_response_tokens: Option<u32>,
    logit_bias: Option<&'a BTreeMap<String, i32>>,
    model_name: &'a str,
}

/// SHA-256 (hex) over a canonical JSON serialization of the prompt and params.
pub fn cache_key(prompt: &str, params: &LlmParams) -> String {
    let material = KeyMaterial {
        prompt,
        temperature: params.temperature,
        max_response_tokens: params.max_response_tokens,
        logit_bias: params.logit_bias.as_ref(),
        model_name: &params.model_name,
    };
    let canonical = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(&canonical))
}

/// One line of the store file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub key: String,
    pub request: Value,
    pub response: LlmResponse,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Responses loaded at open are an immutable snapshot; entries added during
/// this session live in a separate map. Writes are serialized.
pub struct ReplayStore {
    path: Option<PathBuf>,
    snapshot: HashMap<String, LlmResponse>,
    fresh: RwLock<HashMap<String, LlmResponse>>,
    writer: Mutex<Option<File>>,
    skipped: usize,
}

impl ReplayStore {
    /// Opens (or lazily creates) a store file. Corrupt lines are skipped with a warning.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let mut snapshot = HashMap::new();
        let mut skipped = 0;
        if path.exists() {
            let file = File::open(path).map_err(|e| LlmError::Store(format!("{}: {e}", path.display())))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = match line {
                    Ok(line) => line,
                    Err(e) => {
                        log::warn!("{}:{}: unreadable line skipped: {e}", path.display(), i + 1);
                        skipped += 1;
                        continue;
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<StoreEntry>(&line) {
                    Ok(entry) => {
                        snapshot.insert(entry.key, entry.response);
                    }
                    Err(e) => {
                        log::warn!("{}:{}: corrupt entry skipped: {e}", path.display(), i + 1);
                        skipped += 1;
                    }
                }
            }
        }
        Ok(Self {
            path: Some(path.to_owned()),
            snapshot,
            fresh: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            skipped,
        })
    }

    /// A store that is never persisted.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            snapshot: HashMap::new(),
            fresh: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            skipped: 0,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Lines skipped as corrupt when the store was opened.
    pub fn skipped_lines(&self) -> usize {
        self.skipped
    }

    pub fn len(&self) -> usize {
        let fresh = self.fresh.read().expect("store lock");
        self.snapshot.len() + fresh.keys().filter(|k| !self.snapshot.contains_key(*k)).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Most recent response for `key`, marked as cached.
    pub fn get(&self, key: &str) -> Option<LlmResponse> {
        let fresh = self.fresh.read().expect("store lock");
        let found = fresh.get(key).or_else(|| self.snapshot.get(key))?;
        Some(LlmResponse { cached: true, ..found.clone() })
    }

    pub fn put(&self, key: &str, request: Value, response: &LlmResponse) -> Result<(), LlmError> {
        let stored = LlmResponse { cached: false, ..response.clone() };
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let entry = StoreEntry { key: key.to_owned(), request, response: stored.clone(), timestamp };

        let mut writer = self.writer.lock().expect("store writer lock");
        if let Some(path) = &self.path {
            if writer.is_none() {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| LlmError::Store(format!("{}: {e}", path.display())))?;
                *writer = Some(file);
            }
            let mut line = serde_json::to_string(&entry).expect("entries serialize");
            line.push('\n');
            let file = writer.as_mut().expect("writer opened above");
            file.write_all(line.as_bytes())
                .and_then(|()| file.flush())
                .map_err(|e| LlmError::Store(format!("{}: {e}", path.display())))?;
        }
        self.fresh.write().expect("store lock").insert(entry.key, stored);
        Ok(())
    }
}

/// Serves responses from a [`ReplayStore`], falling through to `inner` on a
/// miss and recording the result. Without `inner`, a miss is an error.
pub struct CachedModel<M> {
    inner: Option<M>,
    store: std::sync::Arc<ReplayStore>,
}

impl<M: LanguageModel> CachedModel<M> {
    pub fn recording(inner: M, store: std::sync::Arc<ReplayStore>) -> Self {
        Self { inner: Some(inner), store }
    }

    pub fn store(&self) -> &ReplayStore {
        &self.store
    }
}

impl CachedModel<super::mock::ScriptedModel> {
    pub fn replay_only(store: std::sync::Arc<ReplayStore>) -> Self {
        Self { inner: None, store }
    }
}

impl<M: LanguageModel> LanguageModel for CachedModel<M> {
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<LlmResponse, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let key = cache_key(prompt, params);
        if let Some(hit) = self.store.get(&key) {
            return Ok(hit);
        }
        let inner = self.inner.as_ref().ok_or_else(|| LlmError::ReplayMiss(key.clone()))?;
        let response = inner.complete(prompt, params)?;
        if let Err(e) = self.store.put(&key, inner.request_body(prompt, params), &response) {
            log::error!("failed to record response: {e}");
        }
        Ok(LlmResponse { cached: false, ..response })
    }

    fn request_body(&self, prompt: &str, params: &LlmParams) -> Value {
        match &self.inner {
            Some(inner) => inner.request_body(prompt, params),
            None => super::chat_request_body(prompt, params, &super::default_bias_token_ids()),
        }
    }
}
