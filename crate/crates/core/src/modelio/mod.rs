//! Chat and embedding clients with deterministic record/replay transcripts.
//!
//! Every model call in the toolkit goes through [`ModelClient`]. In
//! [`TranscriptMode::Record`] live responses are appended to a JSONL
//! transcript keyed by a SHA-256 digest of the canonical request; in
//! [`TranscriptMode::Replay`] the same digests are answered from the file
//! without touching the network, so whole pipeline stages re-run
//! bit-for-bit.

mod client;
mod embed;
mod http;
mod scripted;
mod structured;
mod transcript;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use client::{ModelClient, RetryPolicy};
pub use embed::{cosine, ClientEmbedder, Embedder, HashEmbedder};
pub(crate) use http::blocking_client;
pub use http::{HttpBackend, HttpConfig};
pub use scripted::{FnBackend, ScriptedBackend};
pub use structured::{extract_json_object, parse_structured, parse_structured_with, parse_value, Structured};
pub use transcript::{CallKind, Transcript, TranscriptMode, TranscriptRecord};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_TOP_P: f64 = 0.95;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("replay miss: no recorded response for request digest {digest}")]
    ReplayMiss { digest: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("service error {status}: {body}")]
    Service { status: u16, body: String },
    #[error("generation error: {message}")]
    Generation {
        message: String,
        first_raw: String,
        second_raw: String,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no backend configured for {0}")]
    NoBackend(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ModelError {
    /// Whether a retry might succeed. Replay misses and parse failures never qualify.
    pub fn is_transient(&self) -> bool {
        match self {
            ModelError::Transport(_) => true,
            ModelError::Service { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens: 1024,
            seed: None,
        }
    }
}

impl SamplingParams {
    pub fn check(&self) -> Result<(), ModelError> {
        if !(self.temperature >= 0.0) {
            return Err(ModelError::InvalidRequest("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ModelError::InvalidRequest("top_p must be in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(ModelError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Image sent alongside a message. Only the content hash is part of the
/// request identity and the transcript; the bytes travel to live backends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageAttachment {
    pub sha256: String,
    pub media_type: String,
    #[serde(skip)]
    pub bytes: Arc<Vec<u8>>,
}

impl PartialEq for ImageAttachment {
    fn eq(&self, other: &Self) -> bool {
        self.sha256 == other.sha256 && self.media_type == other.media_type
    }
}

impl ImageAttachment {
    pub fn png(bytes: Vec<u8>) -> Self {
        Self {
            sha256: hex::encode(Sha256::digest(&bytes)),
            media_type: "image/png".into(),
            bytes: Arc::new(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageAttachment>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), images: Vec::new() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), images: Vec::new() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), images: Vec::new() }
    }

    pub fn with_image(mut self, image: ImageAttachment) -> Self {
        self.images.push(image);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub params: SamplingParams,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>, params: SamplingParams) -> Self {
        Self { model: model.into(), messages, params }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        match self.messages.first() {
            None => return Err(ModelError::InvalidRequest("messages must be non-empty".into())),
            Some(m) if m.role == Role::Assistant => {
                return Err(ModelError::InvalidRequest(
                    "first message must be system or user".into(),
                ))
            }
            _ => {}
        }
        self.params.check()
    }

    /// 64-hex SHA-256 over the canonical JSON of the request.
    pub fn digest(&self) -> String {
        digest_value(&serde_json::to_value(self).expect("request serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub input: Vec<String>,
}

impl EmbedRequest {
    pub fn digest(&self) -> String {
        digest_value(&serde_json::to_value(self).expect("request serializes"))
    }
}

pub(crate) fn digest_value(value: &serde_json::Value) -> String {
    // serde_json maps are ordered by key, so this text is canonical
    let text = serde_json::to_string(value).expect("value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    ContentFilter,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
    pub finish_reason: FinishReason,
}

impl ChatResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        Self { text: text.into(), usage: Usage::default(), finish_reason: FinishReason::Stop }
    }
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ModelError>;
}

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ModelError>;
}
