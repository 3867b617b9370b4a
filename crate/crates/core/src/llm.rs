//! Prompted, structured calls to the generation model.

use std::sync::Arc;

use crate::modelio::{parse_structured, parse_structured_with, ChatRequest, Message, ModelClient, ModelError, SamplingParams, Structured};
use crate::prompts::PromptSet;

/// A chat model together with the templates and sampling settings a stage uses.
#[derive(Clone)]
pub struct LlmContext {
    pub client: Arc<ModelClient>,
    pub model: String,
    pub params: SamplingParams,
    pub prompts: Arc<PromptSet>,
}

impl LlmContext {
    pub fn new(client: Arc<ModelClient>, model: impl Into<String>) -> Self {
        Self {
            client,
            model: model.into(),
            params: SamplingParams::default(),
            prompts: Arc::new(PromptSet::default()),
        }
    }

    pub fn with_params(mut self, params: SamplingParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_prompts(mut self, prompts: Arc<PromptSet>) -> Self {
        self.prompts = prompts;
        self
    }

    /// Request for template `key`, preceded by template `system` when given.
    pub fn request(&self, system: Option<&str>, key: &str, vars: &[(&str, &str)]) -> ChatRequest {
        let mut messages = Vec::new();
        if let Some(s) = system {
            messages.push(Message::system(self.prompts.get(s)));
        }
        messages.push(Message::user(self.prompts.render(key, vars)));
        ChatRequest::new(self.model.clone(), messages, self.params)
    }

    pub fn ask<T: Structured>(&self, system: Option<&str>, key: &str, vars: &[(&str, &str)]) -> Result<T, ModelError> {
        parse_structured(&self.client, &self.request(system, key, vars))
    }

    /// [`ask`](Self::ask) with a caller-side check that participates in the repair turn.
    pub fn ask_checked<T: Structured>(
        &self,
        system: Option<&str>,
        key: &str,
        vars: &[(&str, &str)],
        check: &dyn Fn(&T) -> Result<(), String>,
    ) -> Result<T, ModelError> {
        parse_structured_with(&self.client, &self.request(system, key, vars), check)
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::modelio::{ScriptedBackend, Transcript, TranscriptMode};

    /// Context whose model answers with `replies` in order, recording a transcript.
    pub fn scripted(replies: &[&str]) -> LlmContext {
        let client = ModelClient::new(TranscriptMode::Record, Arc::new(Transcript::in_memory()))
            .with_chat(Arc::new(ScriptedBackend::new(replies.iter().map(|s| s.to_string()))));
        LlmContext::new(Arc::new(client), "test-model")
    }

    /// A replay-only context over the transcript `ctx` recorded.
    pub fn replay_of(ctx: &LlmContext) -> LlmContext {
        let t = Transcript::from_records(ctx.client.transcript().records());
        LlmContext::new(Arc::new(ModelClient::replay(Arc::new(t))), ctx.model.clone())
    }
}
