//! Zero-shot plan-and-execute baseline.
//!
//! A query is planned into a small graph of operations, a twin is built with
//! only the perception capabilities the graph needs, and the graph runs over
//! the twin in dependency order. Structured operations are deterministic
//! twin lookups; only the fallback and the text sinks call the model.

mod exec;
mod plan;
mod registry;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dtcore::{DigitalTwin, DtError, GroundTruth};
use crate::llm::LlmContext;
use crate::modelio::{Embedder, ModelError};
use crate::perception::{
    build_digital_twin, AdapterSet, BuildOutcome, Capability, FrameSource, PerceptionConfig, PerceptionError,
};

pub use exec::{Execution, Executor, NodeValue, ATTRIBUTE_SIMILARITY, MOTION_THRESHOLD, NO_INSTANCE};
pub use plan::{plan, validate_graph, Op, OpNode, Plan, SPATIAL_RELATIONS, TEMPORAL_EVENTS};
pub use registry::{select_adapters, select_for, AdapterDescriptor, Registry};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("no adapter provides capability {0}")]
    MissingCapability(Capability),
    #[error("registry error: {0}")]
    Registry(String),
    #[error("node {node_id}: {message}")]
    Node { node_id: String, message: String },
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Twin(#[from] DtError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AgentError {
    pub(crate) fn node(node: &OpNode, message: String) -> Self {
        AgentError::Node { node_id: node.node_id.clone(), message }
    }
}

/// Turns chosen registry entries into live adapters.
pub trait AdapterFactory: Send + Sync {
    fn instantiate(&self, chosen: &BTreeMap<Capability, AdapterDescriptor>) -> Result<AdapterSet, AgentError>;
}

/// Twin holding only what `caps` can produce; other fields stay empty and
/// the twin validates in partial mode.
pub fn build_task_twin(
    video_id: &str,
    source: &dyn FrameSource,
    caps: &BTreeSet<Capability>,
    adapters: &AdapterSet,
    config: &PerceptionConfig,
) -> Result<BuildOutcome, AgentError> {
    let have = adapters.capabilities();
    if let Some(c) = caps.iter().find(|c| !have.contains(c)) {
        return Err(AgentError::MissingCapability(*c));
    }
    Ok(build_digital_twin(video_id, source, config, &adapters.restricted(caps))?)
}

/// Twins keyed by video and capability set, shared across queries.
#[derive(Default)]
pub struct TwinCache {
    twins: Mutex<HashMap<(String, BTreeSet<Capability>), Arc<DigitalTwin>>>,
}

impl TwinCache {
    pub fn get_or_build(
        &self,
        video_id: &str,
        caps: &BTreeSet<Capability>,
        build: impl FnOnce() -> Result<DigitalTwin, AgentError>,
    ) -> Result<Arc<DigitalTwin>, AgentError> {
        let key = (video_id.to_string(), caps.clone());
        if let Some(t) = self.twins.lock().expect("twin cache lock").get(&key) {
            return Ok(t.clone());
        }
        let twin = Arc::new(build()?);
        Ok(self.twins.lock().expect("twin cache lock").entry(key).or_insert(twin).clone())
    }

    pub fn len(&self) -> usize {
        self.twins.lock().expect("twin cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub query: String,
    pub video_id: String,
    pub plan: Plan,
    /// Chosen adapter id per capability.
    pub adapters: BTreeMap<Capability, String>,
    pub output: GroundTruth,
    pub trace: Vec<(String, NodeValue)>,
    pub warnings: Vec<String>,
}

pub struct Agent<'a> {
    pub llm: &'a LlmContext,
    pub embedder: Option<&'a dyn Embedder>,
    pub registry: &'a Registry,
    pub factory: &'a dyn AdapterFactory,
    pub perception: PerceptionConfig,
    pub cache: TwinCache,
}

impl<'a> Agent<'a> {
    pub fn new(llm: &'a LlmContext, registry: &'a Registry, factory: &'a dyn AdapterFactory) -> Self {
        Self { llm, embedder: None, registry, factory, perception: PerceptionConfig::default(), cache: TwinCache::default() }
    }

    /// Plan, pick adapters, build (or reuse) the task twin, execute.
    pub fn answer(&self, video_id: &str, source: &dyn FrameSource, query: &str) -> Result<AgentRun, AgentError> {
        let plan = plan(self.llm, query)?;
        let chosen = select_adapters(&plan, self.registry)?;
        let mut warnings = Vec::new();
        let twin = self.cache.get_or_build(video_id, &plan.required_capabilities, || {
            let adapters = self.factory.instantiate(&chosen)?;
            let out = build_task_twin(video_id, source, &plan.required_capabilities, &adapters, &self.perception)?;
            warnings.extend(out.warnings);
            Ok(out.twin)
        })?;
        let exec = Executor::new(Some(self.llm), self.embedder).execute(&plan, &twin, query)?;
        Ok(AgentRun {
            query: query.to_string(),
            video_id: video_id.to_string(),
            adapters: chosen.into_iter().map(|(c, d)| (c, d.id)).collect(),
            plan,
            output: exec.output,
            trace: exec.trace,
            warnings,
        })
    }
}
