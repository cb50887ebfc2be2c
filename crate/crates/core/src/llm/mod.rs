//! Chat-completion transport.
//!
//! Every agent call goes through [`ChatTransport`]. Three implementations
//! exist: [`HttpTransport`] talks to an OpenAI-compatible endpoint,
//! [`RecordingTransport`] wraps another transport and appends each exchange
//! to a transcript, and [`ReplayTransport`] serves responses from a
//! transcript keyed by request fingerprint. Replay makes whole pipeline runs
//! reproducible without a model.

mod fingerprint;
mod http;
mod scripted;
mod transcript;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fingerprint::{canonical_json, fingerprint_value, Fingerprint};
pub use http::{HttpConfig, HttpTransport, RetryPolicy};
pub use scripted::ScriptedTransport;
pub use transcript::{
    record_session, replay_session, RecordingTransport, ReplayTransport, Transcript, TranscriptEntry,
};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recorded response for request fingerprint {0} (prompt drift?)")]
    ReplayMiss(Fingerprint),
    #[error("model returned an error finish: {0}")]
    ModelRefusal(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("corrupt transcript at line {line} (byte offset {offset}): {reason}")]
    CorruptTranscript { line: usize, offset: usize, reason: String },
    #[error("transcript i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl LlmError {
    /// Errors that mean the environment is broken rather than the model.
    pub fn is_infrastructure(&self) -> bool {
        !matches!(self, LlmError::ModelRefusal(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
    /// Which agent issued the call (generalist, code, critic, tester).
    pub request_tag: String,
    /// Distinguishes repeated samples of an otherwise identical request.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sample: u32,
}

fn is_zero(x: &u32) -> bool {
    *x == 0
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| LlmError::InvalidRequest("no messages".into()))?;
        if first.role != Role::System {
            return Err(LlmError::InvalidRequest(
                "first message must be the system message".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let value = serde_json::to_value(self).expect("request serializes");
        fingerprint_value(&value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
        }
    }
}

pub trait ChatTransport: Send + Sync {
    /// One exchange with the model, without request validation or
    /// refusal handling (see [`complete`]).
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<T: ChatTransport + ?Sized> ChatTransport for std::sync::Arc<T> {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).send(request)
    }
}

impl<T: ChatTransport + ?Sized> ChatTransport for Box<T> {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).send(request)
    }
}

/// A transport backed by a closure; handy for scripted models in tests and
/// for adapting other clients.
pub struct FnTransport<F>(pub F);

impl<F> ChatTransport for FnTransport<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, LlmError> + Send + Sync,
{
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (self.0)(request)
    }
}

/// Validates `request`, sends it, and turns an error finish into
/// [`LlmError::ModelRefusal`].
pub fn complete(transport: &dyn ChatTransport, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
    request.validate()?;
    let response = transport.send(request)?;
    if response.finish_reason == FinishReason::Error {
        return Err(LlmError::ModelRefusal(response.content));
    }
    Ok(response)
}
