use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize};

use crate::dtcore::TaskType;
use crate::llm::LlmContext;
use crate::modelio::{ModelError, Structured};
use crate::perception::Capability;

use super::AgentError;

pub const SPATIAL_RELATIONS: [&str; 8] =
    ["in_front_of", "behind", "same_distance", "left_of", "right_of", "above", "below", "next_to"];
pub const TEMPORAL_EVENTS: [&str; 5] = ["appears_after", "disappears_before", "present_at", "moving", "static"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    SelectInstancesByAttribute,
    FilterBySpatialRelation,
    FilterByTemporalEvent,
    ResolvePart,
    LlmFallback,
    AggregateDescribe,
    AnswerQuestion,
    EmitMasks,
    EmitBoxes,
}

impl Op {
    /// The sink a task's graph must end in.
    pub fn sink_for(task: TaskType) -> Op {
        match task {
            TaskType::Segmentation => Op::EmitMasks,
            TaskType::Grounding => Op::EmitBoxes,
            TaskType::Summary => Op::AggregateDescribe,
            TaskType::Vqa => Op::AnswerQuestion,
        }
    }

    pub fn is_sink_op(self) -> bool {
        matches!(self, Op::EmitMasks | Op::EmitBoxes | Op::AggregateDescribe | Op::AnswerQuestion)
    }

    /// `(min, max)` number of inputs.
    fn arity(self) -> (usize, usize) {
        match self {
            Op::SelectInstancesByAttribute => (0, 1),
            Op::FilterBySpatialRelation => (2, 2),
            Op::LlmFallback => (0, usize::MAX),
            _ => (1, 1),
        }
    }
}

fn string_map<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, String>, D::Error> {
    let raw: BTreeMap<String, serde_json::Value> = BTreeMap::deserialize(d)?;
    raw.into_iter()
        .filter(|(_, v)| !v.is_null())
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => Ok((k, s)),
            serde_json::Value::Number(n) => Ok((k, n.to_string())),
            serde_json::Value::Bool(b) => Ok((k, b.to_string())),
            other => Err(serde::de::Error::custom(format!("parameter {k} must be a scalar, got {other}"))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpNode {
    pub node_id: String,
    pub op: Op,
    #[serde(default, deserialize_with = "string_map")]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub inputs: Vec<String>,
}

impl OpNode {
    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(|s| s.trim()).filter(|s| !s.is_empty())
    }

    fn check_params(&self) -> Result<(), String> {
        let need = |key: &str| {
            self.param(key)
                .ok_or_else(|| format!("node {} ({:?}) needs parameter {key:?}", self.node_id, self.op))
        };
        match self.op {
            Op::SelectInstancesByAttribute => {
                need("attribute")?;
            }
            Op::FilterBySpatialRelation => {
                let r = need("relation")?;
                if !SPATIAL_RELATIONS.contains(&r) {
                    return Err(format!("node {}: unknown spatial relation {r:?}", self.node_id));
                }
            }
            Op::FilterByTemporalEvent => {
                let e = need("event")?;
                if !TEMPORAL_EVENTS.contains(&e) {
                    return Err(format!("node {}: unknown temporal event {e:?}", self.node_id));
                }
                if !matches!(e, "moving" | "static") {
                    let f = need("frame")?;
                    if f.parse::<u32>().is_err() {
                        return Err(format!("node {}: frame {f:?} is not a frame number", self.node_id));
                    }
                }
            }
            Op::ResolvePart => {
                need("part")?;
            }
            Op::LlmFallback => {
                need("instruction")?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Capabilities the twin needs for this node to run.
    pub fn capabilities(&self) -> BTreeSet<Capability> {
        match self.op {
            Op::FilterBySpatialRelation => [Capability::Depth].into(),
            Op::FilterByTemporalEvent if matches!(self.param("event"), Some("moving" | "static")) => {
                [Capability::Features].into()
            }
            Op::SelectInstancesByAttribute
            | Op::ResolvePart
            | Op::LlmFallback
            | Op::AggregateDescribe
            | Op::AnswerQuestion => [Capability::Captioning].into(),
            _ => BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub task: TaskType,
    pub nodes: Vec<OpNode>,
    pub required_capabilities: BTreeSet<Capability>,
}

impl Plan {
    /// Validates the graph and derives the required capabilities.
    pub fn new(task: TaskType, nodes: Vec<OpNode>) -> Result<Self, String> {
        validate_graph(task, &nodes)?;
        let mut required_capabilities = BTreeSet::from([Capability::Segmentation]);
        for n in &nodes {
            required_capabilities.extend(n.capabilities());
        }
        Ok(Self { task, nodes, required_capabilities })
    }

    pub fn node(&self, id: &str) -> Option<&OpNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn sink(&self) -> &OpNode {
        let used: BTreeSet<&str> = self.nodes.iter().flat_map(|n| n.inputs.iter().map(String::as_str)).collect();
        self.nodes
            .iter()
            .find(|n| !used.contains(n.node_id.as_str()))
            .expect("validated plan has a sink")
    }

    /// Node indices in dependency order, ties by position in the plan.
    pub fn execution_order(&self) -> Vec<usize> {
        topological_order(&self.nodes).expect("validated plan is acyclic")
    }
}

/// Kahn's algorithm; `None` on a cycle.
fn topological_order(nodes: &[OpNode]) -> Option<Vec<usize>> {
    let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.node_id.as_str(), i)).collect();
    let mut indegree: Vec<usize> = nodes.iter().map(|n| n.inputs.len()).collect();
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for inp in &n.inputs {
            dependents[index[inp.as_str()]].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|i| indegree[*i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &d in &dependents[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.insert(d);
            }
        }
    }
    (order.len() == nodes.len()).then_some(order)
}

pub fn validate_graph(task: TaskType, nodes: &[OpNode]) -> Result<(), String> {
    if nodes.is_empty() {
        return Err("the graph has no nodes".into());
    }
    let mut ids = BTreeSet::new();
    for n in nodes {
        if n.node_id.trim().is_empty() {
            return Err("a node has an empty node_id".into());
        }
        if !ids.insert(n.node_id.as_str()) {
            return Err(format!("duplicate node_id {}", n.node_id));
        }
    }
    for n in nodes {
        for inp in &n.inputs {
            if !ids.contains(inp.as_str()) {
                return Err(format!("node {} reads unknown node {inp}", n.node_id));
            }
        }
        let (lo, hi) = n.op.arity();
        if n.inputs.len() < lo || n.inputs.len() > hi {
            return Err(format!("node {} ({:?}) has {} inputs", n.node_id, n.op, n.inputs.len()));
        }
        n.check_params()?;
    }
    if topological_order(nodes).is_none() {
        return Err("the graph has a cycle".into());
    }
    let used: BTreeSet<&str> = nodes.iter().flat_map(|n| n.inputs.iter().map(String::as_str)).collect();
    let sinks: Vec<&OpNode> = nodes.iter().filter(|n| !used.contains(n.node_id.as_str())).collect();
    if sinks.len() != 1 {
        return Err(format!("the graph must have exactly one sink, found {}", sinks.len()));
    }
    if let Some(n) = nodes.iter().find(|n| n.op.is_sink_op() && used.contains(n.node_id.as_str())) {
        return Err(format!("node {} ({:?}) must be the sink", n.node_id, n.op));
    }
    let want = Op::sink_for(task);
    if sinks[0].op != want {
        return Err(format!("a {task} plan must end in {want:?}, not {:?}", sinks[0].op));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PlanReply {
    task: TaskType,
    nodes: Vec<OpNode>,
}

impl Structured for PlanReply {
    const SHAPE: &'static str = r#"{"task": "segmentation" | "grounding" | "summary" | "vqa", "nodes": [{"node_id": string, "op": string, "params": {string: string}, "inputs": [string]}]}"#;

    fn check(&self) -> Result<(), String> {
        validate_graph(self.task, &self.nodes)
    }
}

/// Plans `query`: task type plus operation graph. An invalid graph gets one
/// repair turn, then planning fails.
pub fn plan(ctx: &LlmContext, query: &str) -> Result<Plan, AgentError> {
    if query.trim().is_empty() {
        return Err(AgentError::Planning("query is empty".into()));
    }
    let reply: PlanReply = ctx.ask(None, "agent/plan", &[("query", query)]).map_err(|e| match e {
        ModelError::Generation { .. } => AgentError::Planning(e.to_string()),
        other => AgentError::Model(other),
    })?;
    Plan::new(reply.task, reply.nodes).map_err(AgentError::Planning)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::testing::scripted;

    pub(crate) fn node(id: &str, op: Op, params: &[(&str, &str)], inputs: &[&str]) -> OpNode {
        OpNode {
            node_id: id.into(),
            op,
            params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    const BEAR_PLAN: &str = r#"{"task":"segmentation","nodes":[
        {"node_id":"n1","op":"select_instances_by_attribute","params":{"attribute":"thick, shaggy coat"},"inputs":[]},
        {"node_id":"n2","op":"emit_masks","params":{},"inputs":["n1"]}]}"#;

    #[test]
    fn two_node_segmentation_plan() {
        let ctx = scripted(&[BEAR_PLAN]);
        let p = plan(&ctx, "Segment the bear with a thick, shaggy coat").unwrap();
        assert_eq!(p.task, TaskType::Segmentation);
        assert_eq!(p.nodes.len(), 2);
        assert_eq!(p.sink().op, Op::EmitMasks);
        assert_eq!(p.required_capabilities, [Capability::Segmentation, Capability::Captioning].into());
        assert_eq!(p.execution_order(), vec![0, 1]);
    }

    #[test]
    fn vqa_plan_ends_in_answer() {
        let ctx = scripted(&[r#"{"task":"vqa","nodes":[
            {"node_id":"a","op":"select_instances_by_attribute","params":{"attribute":"boy"}},
            {"node_id":"b","op":"answer_question","params":{"question":"What will the boy do next?"},"inputs":["a"]}]}"#]);
        let p = plan(&ctx, "What will the boy do next?").unwrap();
        assert_eq!((p.task, p.sink().op), (TaskType::Vqa, Op::AnswerQuestion));
    }

    #[test]
    fn cycle_is_repaired_once_then_rejected() {
        let cyclic = r#"{"task":"segmentation","nodes":[
            {"node_id":"a","op":"llm_fallback","params":{"instruction":"x"},"inputs":["b"]},
            {"node_id":"b","op":"llm_fallback","params":{"instruction":"y"},"inputs":["a"]},
            {"node_id":"c","op":"emit_masks","params":{},"inputs":["a"]}]}"#;
        let ctx = scripted(&[cyclic, BEAR_PLAN]);
        assert!(plan(&ctx, "q").is_ok());
        let requests = ctx.client.transcript().records();
        assert_eq!(requests.len(), 2);

        let ctx = scripted(&[cyclic, cyclic]);
        assert!(matches!(plan(&ctx, "q"), Err(AgentError::Planning(_))));
    }

    #[test]
    fn graph_rules() {
        use Op::*;
        let ok = [node("a", SelectInstancesByAttribute, &[("attribute", "dog")], &[]), node("s", EmitBoxes, &[], &["a"])];
        assert!(validate_graph(TaskType::Grounding, &ok).is_ok());
        assert!(validate_graph(TaskType::Segmentation, &ok).unwrap_err().contains("must end in"));
        let two_sinks = [
            node("a", SelectInstancesByAttribute, &[("attribute", "dog")], &[]),
            node("b", SelectInstancesByAttribute, &[("attribute", "cat")], &[]),
            node("s", EmitBoxes, &[], &["a"]),
        ];
        assert!(validate_graph(TaskType::Grounding, &two_sinks).unwrap_err().contains("exactly one sink"));
        let bad_rel = [
            node("a", SelectInstancesByAttribute, &[("attribute", "dog")], &[]),
            node("b", FilterBySpatialRelation, &[("relation", "near")], &["a", "a"]),
            node("s", EmitBoxes, &[], &["b"]),
        ];
        assert!(validate_graph(TaskType::Grounding, &bad_rel).is_err());
        let no_frame = [
            node("a", SelectInstancesByAttribute, &[("attribute", "dog")], &[]),
            node("b", FilterByTemporalEvent, &[("event", "appears_after")], &["a"]),
            node("s", EmitBoxes, &[], &["b"]),
        ];
        assert!(validate_graph(TaskType::Grounding, &no_frame).is_err());
        let inner_sink = [
            node("a", EmitMasks, &[], &[]),
            node("s", EmitMasks, &[], &["a"]),
        ];
        assert!(validate_graph(TaskType::Segmentation, &inner_sink).is_err());
    }

    #[test]
    fn numeric_params_become_strings() {
        let n: OpNode = serde_json::from_str(
            r#"{"node_id":"t","op":"filter_by_temporal_event","params":{"event":"present_at","frame":3},"inputs":["a"]}"#,
        )
        .unwrap();
        assert_eq!(n.param("frame"), Some("3"));
        assert!(n.capabilities().is_empty());
    }
}
