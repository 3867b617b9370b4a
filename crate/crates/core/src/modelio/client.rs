use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::transcript::{CallKind, Transcript, TranscriptMode, TranscriptRecord};
use super::{ChatBackend, ChatRequest, ChatResponse, EmbedBackend, EmbedRequest, ModelError};

/// Exponential backoff for transient transport failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self { attempts, base_delay: Duration::ZERO, factor: 2 }
    }

    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, ModelError>) -> Result<T, ModelError> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match call() {
                Err(e) if e.is_transient() && attempt < self.attempts => {
                    log::warn!("transient model failure (attempt {attempt}): {e}");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    delay *= self.factor;
                    attempt += 1;
                }
                Err(e) if e.is_transient() => {
                    return Err(ModelError::Transport(format!(
                        "retries exhausted after {attempt} attempts: {e}"
                    )))
                }
                other => return other,
            }
        }
    }
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Entry point for every chat and embedding call.
pub struct ModelClient {
    mode: TranscriptMode,
    transcript: Arc<Transcript>,
    chat_backend: Option<Arc<dyn ChatBackend>>,
    embed_backend: Option<Arc<dyn EmbedBackend>>,
    retry: RetryPolicy,
    gate: Gate,
}

impl ModelClient {
    pub const DEFAULT_IN_FLIGHT: usize = 4;

    pub fn new(mode: TranscriptMode, transcript: Arc<Transcript>) -> Self {
        Self {
            mode,
            transcript,
            chat_backend: None,
            embed_backend: None,
            retry: RetryPolicy::default(),
            gate: Gate::new(Self::DEFAULT_IN_FLIGHT),
        }
    }

    /// Client that answers only from `transcript`.
    pub fn replay(transcript: Arc<Transcript>) -> Self {
        Self::new(TranscriptMode::Replay, transcript)
    }

    pub fn with_chat(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.chat_backend = Some(backend);
        self
    }

    pub fn with_embed(mut self, backend: Arc<dyn EmbedBackend>) -> Self {
        self.embed_backend = Some(backend);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.gate = Gate::new(n);
        self
    }

    pub fn mode(&self) -> TranscriptMode {
        self.mode
    }

    pub fn transcript(&self) -> &Arc<Transcript> {
        &self.transcript
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ModelError> {
        request.check()?;
        let digest = request.digest();
        if self.mode == TranscriptMode::Replay {
            let rec = self
                .transcript
                .lookup(&digest)
                .ok_or(ModelError::ReplayMiss { digest })?;
            return Ok(serde_json::from_value(rec.response)?);
        }
        let backend = self.chat_backend.as_ref().ok_or(ModelError::NoBackend("chat"))?;
        let started = Instant::now();
        let response = {
            let _slot = self.gate.acquire();
            self.retry.run(|| backend.chat(request))?
        };
        if self.mode == TranscriptMode::Record {
            self.transcript.append(TranscriptRecord {
                request_digest: digest,
                kind: CallKind::Chat,
                request: serde_json::to_value(request)?,
                response: serde_json::to_value(&response)?,
                wall_time_ms: started.elapsed().as_millis() as u64,
            })?;
        }
        Ok(response)
    }

    /// One unit-norm vector per input text.
    pub fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ModelError> {
        if texts.is_empty() {
            return Err(ModelError::InvalidRequest("embed needs at least one text".into()));
        }
        let request = EmbedRequest { model: model.to_string(), input: texts.to_vec() };
        let digest = request.digest();
        let vectors: Vec<Vec<f64>> = if self.mode == TranscriptMode::Replay {
            let rec = self
                .transcript
                .lookup(&digest)
                .ok_or(ModelError::ReplayMiss { digest })?;
            serde_json::from_value(rec.response)?
        } else {
            let backend = self.embed_backend.as_ref().ok_or(ModelError::NoBackend("embed"))?;
            let started = Instant::now();
            let vectors = {
                let _slot = self.gate.acquire();
                self.retry.run(|| backend.embed(&request))?
            };
            let vectors: Vec<Vec<f64>> = vectors.into_iter().map(unit).collect();
            if self.mode == TranscriptMode::Record {
                self.transcript.append(TranscriptRecord {
                    request_digest: digest,
                    kind: CallKind::Embed,
                    request: serde_json::to_value(&request)?,
                    response: serde_json::to_value(&vectors)?,
                    wall_time_ms: started.elapsed().as_millis() as u64,
                })?;
            }
            vectors
        };
        if vectors.len() != texts.len() {
            return Err(ModelError::Service {
                status: 200,
                body: format!("expected {} vectors, got {}", texts.len(), vectors.len()),
            });
        }
        Ok(vectors)
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::{HashEmbedder, Message, SamplingParams, ScriptedBackend};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("m", vec![Message::user(text)], SamplingParams::default())
    }

    #[test]
    fn record_then_replay_is_identical() {
        let transcript = Arc::new(Transcript::in_memory());
        let live = ModelClient::new(TranscriptMode::Record, transcript.clone())
            .with_chat(Arc::new(ScriptedBackend::new(["first answer", "second answer"])));
        let a = live.chat(&req("q1")).unwrap();
        let b = live.chat(&req("q2")).unwrap();
        assert_eq!(transcript.len(), 2);

        let replay = ModelClient::replay(Arc::new(Transcript::from_records(transcript.records())));
        assert_eq!(replay.chat(&req("q2")).unwrap(), b);
        assert_eq!(replay.chat(&req("q1")).unwrap(), a);
    }

    #[test]
    fn replay_miss_names_digest() {
        let replay = ModelClient::replay(Arc::new(Transcript::in_memory()));
        let r = req("never recorded");
        match replay.chat(&r) {
            Err(ModelError::ReplayMiss { digest }) => assert_eq!(digest, r.digest()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn passthrough_records_nothing() {
        let transcript = Arc::new(Transcript::in_memory());
        let c = ModelClient::new(TranscriptMode::Passthrough, transcript.clone())
            .with_chat(Arc::new(ScriptedBackend::new(["x"])));
        c.chat(&req("q")).unwrap();
        assert!(transcript.is_empty());
    }

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        status: u16,
    }

    impl ChatBackend for Flaky {
        fn chat(&self, _: &ChatRequest) -> Result<ChatResponse, ModelError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(ModelError::Service { status: self.status, body: "busy".into() })
            } else {
                Ok(ChatResponse::stop("ok"))
            }
        }
    }

    #[test]
    fn transient_failures_are_retried_up_to_three_attempts() {
        let flaky = Arc::new(Flaky { failures: 2, calls: AtomicU32::new(0), status: 503 });
        let c = ModelClient::new(TranscriptMode::Passthrough, Arc::new(Transcript::in_memory()))
            .with_chat(flaky.clone())
            .with_retry(RetryPolicy::immediate(3));
        assert_eq!(c.chat(&req("q")).unwrap().text, "ok");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);

        let flaky = Arc::new(Flaky { failures: 3, calls: AtomicU32::new(0), status: 503 });
        let c = ModelClient::new(TranscriptMode::Passthrough, Arc::new(Transcript::in_memory()))
            .with_chat(flaky.clone())
            .with_retry(RetryPolicy::immediate(3));
        assert!(matches!(c.chat(&req("q")), Err(ModelError::Transport(_))));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let flaky = Arc::new(Flaky { failures: 5, calls: AtomicU32::new(0), status: 400 });
        let c = ModelClient::new(TranscriptMode::Passthrough, Arc::new(Transcript::in_memory()))
            .with_chat(flaky.clone())
            .with_retry(RetryPolicy::immediate(3));
        assert!(matches!(c.chat(&req("q")), Err(ModelError::Service { status: 400, .. })));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn embeddings_replay_and_are_unit_norm() {
        let transcript = Arc::new(Transcript::in_memory());
        let c = ModelClient::new(TranscriptMode::Record, transcript.clone())
            .with_embed(Arc::new(HashEmbedder::new(32)));
        let a = c.embed("hash-32", &["a".to_string()]).unwrap();
        let replay = ModelClient::replay(Arc::new(Transcript::from_records(transcript.records())));
        let b = replay.embed("hash-32", &["a".to_string()]).unwrap();
        let b2 = replay.embed("hash-32", &["a".to_string()]).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, b2);
        for v in a.iter().chain(&b) {
            assert!((crate::modelio::cosine(v, v) - 1.0).abs() < 1e-9);
        }
        assert!(c.embed("hash-32", &[]).is_err());
    }

    #[test]
    fn concurrent_chats_are_all_recorded() {
        let transcript = Arc::new(Transcript::in_memory());
        let c = Arc::new(
            ModelClient::new(TranscriptMode::Record, transcript.clone())
                .with_chat(Arc::new(crate::modelio::FnBackend::new(|r: &ChatRequest| {
                    Ok(ChatResponse::stop(r.messages[0].content.to_uppercase()))
                }))),
        );
        std::thread::scope(|s| {
            for i in 0..16 {
                let c = c.clone();
                s.spawn(move || c.chat(&req(&format!("q{i}"))).unwrap());
            }
        });
        assert_eq!(transcript.len(), 16);
    }
}
