//! Chat-completion client with deterministic record/replay.
//!
//! A [`Gateway`] wraps one [`ChatBackend`]: the HTTP transport (feature
//! `live`), a [`ReplayBackend`] over a recorded [`Transcript`], or any closure
//! for tests. Requests are keyed by the SHA-256 of their canonical JSON form.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::jsonl::{self, JsonlError};
use crate::Lang;

#[cfg(feature = "live")]
mod live;
#[cfg(feature = "live")]
pub use live::LiveBackend;

pub const DEFAULT_TEMPERATURE: f64 = 0.8;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a helpful programming assistant.";

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unrecorded request {hash} (model `{model}`, user prompt {preview:?})")]
    ReplayMiss {
        hash: String,
        model: String,
        preview: String,
    },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("completion did not succeed (finish_reason `{0}`)")]
    Unsuccessful(String),
    #[error("CoT undefined for English")]
    CotUndefinedForEnglish,
    #[error("endpoint configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Transcript(#[from] JsonlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub system_prompt: String,
    pub user_prompt: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(
        model_name: impl Into<String>,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
    ) -> Self {
        Self {
            model_name: model_name.into(),
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty model name".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form (sorted keys, no whitespace).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        let mut canon = String::new();
        write_canonical(&value, &mut canon);
        hex::encode(Sha256::digest(canon.as_bytes()))
    }
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => {
            let _ = write!(out, "{other}");
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    /// Present exactly when `finish_reason` signals success.
    pub text: Option<String>,
    pub finish_reason: String,
    pub latency_secs: f64,
    #[serde(default)]
    pub token_counts: TokenCounts,
}

impl ChatResponse {
    /// Build a response, dropping any text that accompanies a failed finish.
    pub fn new(
        text: Option<String>,
        finish_reason: impl Into<String>,
        latency_secs: f64,
        token_counts: TokenCounts,
    ) -> Self {
        let finish_reason = finish_reason.into();
        let ok = finish_ok(&finish_reason);
        Self {
            text: if ok { Some(text.unwrap_or_default()) } else { None },
            finish_reason,
            latency_secs,
            token_counts,
        }
    }

    /// Successful response with the given text; handy for fixtures.
    pub fn stop(text: impl Into<String>) -> Self {
        Self::new(Some(text.into()), "stop", 0.0, TokenCounts::default())
    }

    pub fn is_success(&self) -> bool {
        finish_ok(&self.finish_reason)
    }

    pub fn text(&self) -> Result<&str, GatewayError> {
        match &self.text {
            Some(t) if self.is_success() => Ok(t),
            _ => Err(GatewayError::Unsuccessful(self.finish_reason.clone())),
        }
    }
}

fn finish_ok(reason: &str) -> bool {
    matches!(reason, "stop" | "length" | "eos")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub hash: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

/// Ordered request/response log, indexed by request hash.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    records: Vec<TranscriptRecord>,
    index: HashMap<String, usize>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Load a JSONL transcript. Stored hashes are recomputed and must match.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let mut t = Self::new();
        for rec in jsonl::read::<TranscriptRecord>(path)? {
            let expected = rec.value.request.hash();
            if rec.value.hash != expected {
                return Err(GatewayError::InvalidRequest(format!(
                    "{}:{}: stored hash {} does not match request ({expected})",
                    path.display(),
                    rec.line,
                    rec.value.hash
                )));
            }
            t.push(rec.value.request, rec.value.response);
        }
        Ok(t)
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (ChatRequest, ChatResponse)>) -> Self {
        let mut t = Self::new();
        for (req, resp) in pairs {
            t.push(req, resp);
        }
        t
    }

    /// Append a record. A request already present keeps its first response.
    pub fn push(&mut self, request: ChatRequest, response: ChatResponse) {
        let hash = request.hash();
        if self.index.contains_key(&hash) {
            return;
        }
        self.index.insert(hash.clone(), self.records.len());
        self.records.push(TranscriptRecord {
            hash,
            request,
            response,
        });
    }

    pub fn get(&self, hash: &str) -> Option<&TranscriptRecord> {
        self.index.get(hash).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), GatewayError> {
        jsonl::write(path.as_ref(), &self.records)?;
        Ok(())
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, GatewayError> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self(req)
    }
}

/// Serves recorded responses only; never touches the network.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    transcript: Transcript,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript) -> Self {
        Self { transcript }
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let hash = req.hash();
        match self.transcript.get(&hash) {
            Some(rec) => Ok(rec.response.clone()),
            None => Err(GatewayError::ReplayMiss {
                hash,
                model: req.model_name.clone(),
                preview: req.user_prompt.chars().take(60).collect(),
            }),
        }
    }
}

/// Endpoint settings for the HTTP backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model_name: String,
    pub system_prompt: String,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key: None,
            model_name: String::new(),
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            timeout_secs: 120.0,
            max_attempts: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl EndpointConfig {
    /// Read `POLYGLOT_BASE_URL`, `POLYGLOT_API_KEY` (or `OPENAI_API_KEY`) and
    /// `POLYGLOT_MODEL` over the defaults.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get("POLYGLOT_BASE_URL") {
            self.base_url = v;
        }
        if let Some(v) = get("POLYGLOT_API_KEY").or_else(|| get("OPENAI_API_KEY")) {
            self.api_key = Some(v);
        }
        if let Some(v) = get("POLYGLOT_MODEL") {
            self.model_name = v;
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.base_url.starts_with("http://") && !self.base_url.starts_with("https://") {
            return Err(GatewayError::Config(format!(
                "base_url `{}` must start with http:// or https://",
                self.base_url
            )));
        }
        if self.max_attempts == 0 {
            return Err(GatewayError::Config("max_attempts must be at least 1".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(GatewayError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }

    /// Sleep before retry number `retry` (1-based): initial × 2^(retry-1), capped.
    pub fn backoff(&self, retry: u32) -> std::time::Duration {
        let factor = 1u64 << (retry.saturating_sub(1)).min(20);
        let ms = self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms);
        std::time::Duration::from_millis(ms)
    }
}

/// Per-model request settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelProfile {
    pub model_name: String,
    pub system_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for ModelProfile {
    fn default() -> Self {
        Self {
            model_name: String::new(),
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }
}

impl ModelProfile {
    pub fn new(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            ..Self::default()
        }
    }

    pub fn request(&self, user_prompt: impl Into<String>) -> ChatRequest {
        self.request_with_system(self.system_prompt.clone(), user_prompt)
    }

    pub fn request_with_system(
        &self,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
    ) -> ChatRequest {
        ChatRequest {
            model_name: self.model_name.clone(),
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }
}

/// The back-translation instruction for a non-English prompt.
pub fn cot_prompt(problem: &str, source: Lang) -> Result<String, GatewayError> {
    if source == Lang::En {
        return Err(GatewayError::CotUndefinedForEnglish);
    }
    Ok(format!(
        "Translate the sentence {problem} from {} to English",
        source.english_name()
    ))
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    recorder: Option<Mutex<Transcript>>,
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        Self {
            backend: Box::new(backend),
            recorder: None,
        }
    }

    pub fn replay(transcript: Transcript) -> Self {
        Self::new(ReplayBackend::new(transcript))
    }

    pub fn replay_file(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        Ok(Self::replay(Transcript::load(path)?))
    }

    #[cfg(feature = "live")]
    pub fn live(cfg: EndpointConfig) -> Result<Self, GatewayError> {
        Ok(Self::new(LiveBackend::new(cfg)?).recording())
    }

    /// Record every successful exchange for later replay.
    pub fn recording(mut self) -> Self {
        self.recorder = Some(Mutex::new(Transcript::new()));
        self
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let resp = self.complete_unrecorded(req)?;
        self.record(req, &resp);
        Ok(resp)
    }

    fn complete_unrecorded(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        self.backend.complete(req)
    }

    fn record(&self, req: &ChatRequest, resp: &ChatResponse) {
        if let Some(rec) = &self.recorder {
            rec.lock()
                .expect("recorder lock")
                .push(req.clone(), resp.clone());
        }
    }

    /// Issue `requests` with at most `max_in_flight` outstanding; results keep input order.
    pub fn batch(
        &self,
        requests: &[ChatRequest],
        max_in_flight: usize,
    ) -> Result<Vec<Result<ChatResponse, GatewayError>>, GatewayError> {
        if max_in_flight == 0 {
            return Err(GatewayError::InvalidRequest("max_in_flight must be at least 1".into()));
        }
        let slots: Vec<Mutex<Option<Result<ChatResponse, GatewayError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = max_in_flight.min(requests.len());
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= requests.len() {
                        break;
                    }
                    let r = self.complete_unrecorded(&requests[i]);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        let out: Vec<_> = slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect();
        for (req, r) in requests.iter().zip(&out) {
            if let Ok(resp) = r {
                self.record(req, resp);
            }
        }
        Ok(out)
    }

    /// Ask the model to translate `problem` into English with the CoT template.
    pub fn backtranslate_prompt(
        &self,
        profile: &ModelProfile,
        problem: &str,
        source: Lang,
    ) -> Result<String, GatewayError> {
        let req = profile.request(cot_prompt(problem, source)?);
        Ok(self.complete(&req)?.text()?.trim().to_string())
    }

    /// Snapshot of everything recorded so far.
    pub fn transcript(&self) -> Option<Transcript> {
        self.recorder
            .as_ref()
            .map(|m| m.lock().expect("recorder lock").clone())
    }
}
