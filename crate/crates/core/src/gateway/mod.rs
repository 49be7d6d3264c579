//! Single entry point for every agent call.
//!
//! A [`Gateway`] wraps one [`ChatBackend`] (live HTTP, scripted fixture, or
//! replay of a recording) and keeps an ordered log of every call made through
//! it. The log is what traces persist and what the replay backend consumes.

mod json;
mod live;
mod replay;
mod scripted;

use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use json::{extract_json_any, extract_json_block};
pub use live::{HttpTransport, OpenAiBackend, RetryPolicy, Transport, API_KEY_ENV};
pub use replay::ReplayBackend;
pub use scripted::ScriptedBackend;

pub const DEFAULT_TEMPERATURE: f64 = 0.8;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;
pub const DEFAULT_SEED: i64 = 10;

/// Appended as an extra user message when a structured reply fails validation.
pub const REASK_MESSAGE: &str =
    "Your previous reply could not be used. Reply with valid JSON only, following the requested format exactly.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_messages: Vec<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: i64,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_messages: Vec<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: DEFAULT_SEED,
        }
    }

    pub fn with_decoding(mut self, decoding: &Decoding) -> Self {
        self.temperature = decoding.temperature;
        self.max_tokens = decoding.max_tokens;
        self.seed = decoding.seed;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::new(
                GatewayErrorKind::MalformedResponse,
                format!("invalid temperature {}", self.temperature),
            ));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::new(GatewayErrorKind::MalformedResponse, "max_tokens must be >= 1"));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON rendering of the request.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Decoding parameters shared by all requests of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: i64,
}

impl Default for Decoding {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE, max_tokens: DEFAULT_MAX_TOKENS, seed: DEFAULT_SEED }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub backend_id: String,
    /// Number of transport attempts it took to obtain this reply.
    pub attempts: u32,
}

impl ChatResponse {
    pub fn text_only(text: impl Into<String>, backend_id: &str) -> Self {
        Self {
            text: text.into(),
            prompt_tokens: 0,
            completion_tokens: 0,
            backend_id: backend_id.to_string(),
            attempts: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GatewayErrorKind {
    Transport,
    RateLimited,
    Timeout,
    MalformedResponse,
    ScriptExhausted,
    /// A replayed call did not match the recorded call at the same position.
    ReplayDivergence,
}

impl GatewayErrorKind {
    pub fn is_retryable(self) -> bool {
        matches!(self, GatewayErrorKind::Transport | GatewayErrorKind::RateLimited | GatewayErrorKind::Timeout)
    }
}

impl fmt::Display for GatewayErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} after {attempts} attempt(s): {detail}")]
pub struct GatewayError {
    pub kind: GatewayErrorKind,
    pub detail: String,
    pub attempts: u32,
    /// Position in the call log, set for replay divergences.
    pub call_index: Option<usize>,
}

impl GatewayError {
    pub fn new(kind: GatewayErrorKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into(), attempts: 1, call_index: None }
    }

    pub fn malformed(detail: impl Into<String>) -> Self {
        Self::new(GatewayErrorKind::MalformedResponse, detail)
    }
}

/// A chat-completion provider. Implementations must be shareable across threads.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    /// `routing_key` names the calling agent; only scripted and replay backends use it.
    fn complete(&self, routing_key: &str, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// One entry of the call log and of a recording file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub routing_key: String,
    pub request_digest: String,
    pub response_text: String,
    #[serde(default = "one")]
    pub attempts: u32,
}

fn one() -> u32 {
    1
}

/// Recording file: JSON array of call records in call order.
pub fn save_recording(path: &Path, calls: &[CallRecord]) -> std::io::Result<()> {
    let json = serde_json::to_vec_pretty(calls)?;
    std::fs::write(path, json)
}

pub fn load_recording(path: &Path) -> std::io::Result<Vec<CallRecord>> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Backend plus call log plus decoding defaults.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    decoding: Decoding,
    calls: Mutex<Vec<CallRecord>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, decoding: Decoding) -> Self {
        Self { backend, decoding, calls: Mutex::new(Vec::new()) }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn decoding(&self) -> Decoding {
        self.decoding
    }

    /// Builds a request carrying this gateway's decoding parameters.
    pub fn request(&self, system_prompt: impl Into<String>, user_messages: Vec<String>) -> ChatRequest {
        ChatRequest::new(system_prompt, user_messages).with_decoding(&self.decoding)
    }

    pub fn complete(&self, routing_key: &str, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let response = self.backend.complete(routing_key, request)?;
        log::debug!("{routing_key}: {} chars in {} attempt(s)", response.text.len(), response.attempts);
        self.calls.lock().expect("call log poisoned").push(CallRecord {
            routing_key: routing_key.to_string(),
            request_digest: request.digest(),
            response_text: response.text.clone(),
            attempts: response.attempts,
        });
        Ok(response)
    }

    /// Calls the backend and parses the reply; on a parse failure re-asks once
    /// with [`REASK_MESSAGE`] appended, then surfaces the second failure.
    pub fn complete_parsed<T, E>(
        &self,
        routing_key: &str,
        request: &ChatRequest,
        mut parse: impl FnMut(&str) -> Result<T, E>,
    ) -> Result<T, E>
    where
        E: From<GatewayError>,
    {
        let first = self.complete(routing_key, request)?;
        match parse(&first.text) {
            Ok(v) => Ok(v),
            Err(_) => {
                log::warn!("{routing_key}: reply failed validation, re-asking once");
                let mut retry = request.clone();
                retry.user_messages.push(REASK_MESSAGE.to_string());
                let second = self.complete(routing_key, &retry)?;
                parse(&second.text)
            }
        }
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log poisoned").len()
    }
}
