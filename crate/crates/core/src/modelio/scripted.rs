use std::collections::VecDeque;
use std::sync::Mutex;

use super::{ChatBackend, ChatRequest, ChatResponse, ModelError};

/// Answers chat calls from a fixed queue, in order. Used to capture fixture transcripts.
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Requests received so far.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ModelError> {
        self.seen.lock().unwrap().push(request.clone());
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .map(ChatResponse::stop)
            .ok_or_else(|| ModelError::Service {
                status: 400,
                body: "scripted backend has no responses left".into(),
            })
    }
}

/// Chat backend backed by a closure.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, ModelError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, ModelError> + Send + Sync,
{
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ModelError> {
        (self.f)(request)
    }
}
