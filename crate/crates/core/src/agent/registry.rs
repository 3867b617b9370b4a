use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::perception::Capability;

use super::{AgentError, Plan};

/// One entry of `registry.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterDescriptor {
    pub id: String,
    pub capability: Capability,
    /// Adapter family, e.g. `http`, `vlm`, `classical` or `mock`.
    pub kind: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub priority: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub adapters: Vec<AdapterDescriptor>,
}

impl Registry {
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| AgentError::Registry(format!("{}: {e}", path.display())))
    }

    /// Highest-priority adapter for `cap`, ties broken by the smaller id.
    pub fn best(&self, cap: Capability) -> Option<&AdapterDescriptor> {
        self.adapters
            .iter()
            .filter(|a| a.capability == cap)
            .min_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.id.cmp(&b.id)))
    }
}

/// One descriptor per capability the plan needs, nothing else.
pub fn select_adapters(
    plan: &Plan,
    registry: &Registry,
) -> Result<BTreeMap<Capability, AdapterDescriptor>, AgentError> {
    select_for(&plan.required_capabilities, registry)
}

pub fn select_for(
    caps: &BTreeSet<Capability>,
    registry: &Registry,
) -> Result<BTreeMap<Capability, AdapterDescriptor>, AgentError> {
    caps.iter()
        .map(|c| {
            registry
                .best(*c)
                .cloned()
                .map(|d| (*c, d))
                .ok_or(AgentError::MissingCapability(*c))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtcore::TaskType;
    use crate::agent::{Op, OpNode};

    fn d(id: &str, cap: Capability, priority: i64) -> AdapterDescriptor {
        AdapterDescriptor { id: id.into(), capability: cap, kind: "mock".into(), endpoint: None, model_id: None, priority }
    }

    fn full() -> Registry {
        Registry {
            adapters: vec![
                d("sam", Capability::Segmentation, 1),
                d("depth-b", Capability::Depth, 1),
                d("depth-a", Capability::Depth, 2),
                d("vlm", Capability::Captioning, 1),
                d("flow", Capability::Features, 1),
            ],
        }
    }

    fn present_plan() -> Plan {
        let nodes = vec![
            OpNode {
                node_id: "a".into(),
                op: Op::FilterByTemporalEvent,
                params: [("event".to_string(), "present_at".to_string()), ("frame".to_string(), "1".to_string())].into(),
                inputs: vec!["x".into()],
            },
            OpNode { node_id: "x".into(), op: Op::LlmFallback, params: [("instruction".to_string(), "all".to_string())].into(), inputs: vec![] },
            OpNode { node_id: "s".into(), op: Op::EmitMasks, params: Default::default(), inputs: vec!["a".into()] },
        ];
        Plan::new(TaskType::Segmentation, nodes).unwrap()
    }

    #[test]
    fn only_required_capabilities_are_chosen() {
        let mut plan = present_plan();
        plan.required_capabilities = [Capability::Segmentation].into();
        let chosen = select_adapters(&plan, &full()).unwrap();
        assert_eq!(chosen.keys().copied().collect::<Vec<_>>(), vec![Capability::Segmentation]);
    }

    #[test]
    fn priority_then_id() {
        let r = full();
        assert_eq!(r.best(Capability::Depth).unwrap().id, "depth-a");
        let tie = Registry { adapters: vec![d("z", Capability::Depth, 1), d("m", Capability::Depth, 1)] };
        assert_eq!(tie.best(Capability::Depth).unwrap().id, "m");
    }

    #[test]
    fn empty_registry_names_the_capability() {
        let e = select_adapters(&present_plan(), &Registry::default()).unwrap_err();
        assert!(matches!(e, AgentError::MissingCapability(_)));
        assert!(e.to_string().contains("captioning") || e.to_string().contains("segmentation"));
    }

    #[test]
    fn registry_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        std::fs::write(&path, serde_json::to_string(&full()).unwrap()).unwrap();
        assert_eq!(Registry::load(&path).unwrap(), full());
    }
}
