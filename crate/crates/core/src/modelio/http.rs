use std::sync::{Mutex, Once};
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};

use super::{
    ChatBackend, ChatRequest, ChatResponse, EmbedBackend, EmbedRequest, FinishReason, ModelError,
    Role, Usage,
};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Minimum spacing between requests to this endpoint.
    pub min_interval: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            min_interval: Duration::ZERO,
        }
    }

    /// Reads `RVT_API_BASE` and `RVT_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let base = std::env::var("RVT_API_BASE").ok()?;
        let mut cfg = Self::new(base);
        cfg.api_key = std::env::var("RVT_API_KEY").ok();
        Some(cfg)
    }
}

/// Chat-completions and embeddings over an OpenAI-compatible JSON API.
pub struct HttpBackend {
    config: HttpConfig,
    http: reqwest::blocking::Client,
    last_call: Mutex<Option<Instant>>,
}

static TLS_PROVIDER: Once = Once::new();

/// Blocking HTTP client with the process-wide TLS provider installed.
pub(crate) fn blocking_client(timeout: Duration) -> Result<reqwest::blocking::Client, String> {
    TLS_PROVIDER.call_once(|| {
        let _ = rustls::crypto::ring::default_provider().install_default();
    });
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| e.to_string())
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, ModelError> {
        let http = blocking_client(config.timeout).map_err(ModelError::Transport)?;
        Ok(Self { config, http, last_call: Mutex::new(None) })
    }

    fn pace(&self) {
        if self.config.min_interval.is_zero() {
            return;
        }
        let mut last = self.last_call.lock().unwrap();
        if let Some(prev) = *last {
            let since = prev.elapsed();
            if since < self.config.min_interval {
                std::thread::sleep(self.config.min_interval - since);
            }
        }
        *last = Some(Instant::now());
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ModelError> {
        self.pace();
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut req = self.http.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ModelError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| ModelError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ModelError::Service { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| ModelError::Service {
            status,
            body: format!("unparsable body ({e}): {text}"),
        })
    }
}

pub(crate) fn chat_body(request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            if m.images.is_empty() {
                json!({ "role": role, "content": m.content })
            } else {
                let mut parts = vec![json!({ "type": "text", "text": m.content })];
                for img in &m.images {
                    let data = base64::engine::general_purpose::STANDARD.encode(img.bytes.as_slice());
                    parts.push(json!({
                        "type": "image_url",
                        "image_url": { "url": format!("data:{};base64,{}", img.media_type, data) }
                    }));
                }
                json!({ "role": role, "content": parts })
            }
        })
        .collect();
    let mut body = json!({
        "model": request.model,
        "messages": messages,
        "temperature": request.params.temperature,
        "top_p": request.params.top_p,
        "max_tokens": request.params.max_tokens,
    });
    if let Some(seed) = request.params.seed {
        body["seed"] = json!(seed);
    }
    body
}

pub(crate) fn parse_chat_body(body: &Value) -> Result<ChatResponse, ModelError> {
    let bad = |what: &str| ModelError::Service { status: 200, body: format!("missing {what} in {body}") };
    let choice = body.get("choices").and_then(|c| c.get(0)).ok_or_else(|| bad("choices[0]"))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("message.content"))?
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some("content_filter") => FinishReason::ContentFilter,
        _ => FinishReason::Other,
    };
    let usage = Usage {
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0) as u32,
        completion_tokens: body
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0) as u32,
    };
    Ok(ChatResponse { text, usage, finish_reason })
}

impl ChatBackend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ModelError> {
        parse_chat_body(&self.post("chat/completions", &chat_body(request))?)
    }
}

impl EmbedBackend for HttpBackend {
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ModelError> {
        let body = self.post("embeddings", &json!({ "model": request.model, "input": request.input }))?;
        let data = body
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| ModelError::Service { status: 200, body: "missing data".into() })?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (i, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Value::as_u64).map_or(i, |x| x as usize);
            let v: Vec<f64> = serde_json::from_value(item.get("embedding").cloned().unwrap_or(Value::Null))?;
            rows.push((idx, v));
        }
        rows.sort_by_key(|r| r.0);
        Ok(rows.into_iter().map(|r| r.1).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::{ImageAttachment, Message, ModelClient, RetryPolicy, SamplingParams, Transcript, TranscriptMode};
    use crate::test_http::serve;
    use std::sync::Arc;

    #[test]
    fn wire_format_and_retry_on_503() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hello"},"finish_reason":"stop"}],"usage":{"prompt_tokens":5,"completion_tokens":1}}"#;
        let (base, server) = serve(vec![(503, "{}".into()), (200, ok.into())]);
        let backend = HttpBackend::new(HttpConfig { api_key: Some("k".into()), ..HttpConfig::new(base) }).unwrap();
        let client = ModelClient::new(TranscriptMode::Record, Arc::new(Transcript::in_memory()))
            .with_chat(Arc::new(backend))
            .with_retry(RetryPolicy::immediate(3));
        let req = ChatRequest::new(
            "gpt-4o",
            vec![Message::user("hi").with_image(ImageAttachment::png(vec![9, 9]))],
            SamplingParams::default(),
        );
        let resp = client.chat(&req).unwrap();
        assert_eq!(resp.text, "hello");
        assert_eq!(resp.usage.prompt_tokens, 5);
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 2);
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["temperature"], 0.7);
        assert_eq!(sent["top_p"], 0.95);
        assert_eq!(sent["messages"][0]["content"][1]["type"], "image_url");
        assert_eq!(client.transcript().len(), 1);
    }

    #[test]
    fn embeddings_wire_format() {
        let body = r#"{"data":[{"index":1,"embedding":[0.0,2.0]},{"index":0,"embedding":[3.0,4.0]}]}"#;
        let (base, server) = serve(vec![(200, body.into())]);
        let client = ModelClient::new(TranscriptMode::Passthrough, Arc::new(Transcript::in_memory()))
            .with_embed(Arc::new(HttpBackend::new(HttpConfig::new(base)).unwrap()));
        let v = client.embed("e", &["a".into(), "b".into()]).unwrap();
        assert_eq!(v, vec![vec![0.6, 0.8], vec![0.0, 1.0]]);
        server.join().unwrap();
    }

    #[test]
    fn client_error_surfaces_status() {
        let (base, server) = serve(vec![(401, r#"{"error":"bad key"}"#.into())]);
        let backend = HttpBackend::new(HttpConfig::new(base)).unwrap();
        let req = ChatRequest::new("m", vec![Message::user("x")], SamplingParams::default());
        match backend.chat(&req) {
            Err(ModelError::Service { status, .. }) => assert_eq!(status, 401),
            other => panic!("unexpected {other:?}"),
        }
        server.join().unwrap();
    }
}
