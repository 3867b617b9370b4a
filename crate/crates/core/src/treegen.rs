//! Object selection, task assignment and reasoning-tree construction.
//!
//! A reasoning tree is a DAG rooted at one tracked instance. Its edges are
//! checked against the twin before use: spatial edges must match a relation
//! recorded for the pair, temporal edges must span distinct moments, and
//! semantic edges must point at something with attribute text. Edges that
//! fail are pruned, as are nodes no longer reachable from the root.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dtcore::{serialize_twin_with, DigitalTwin, DtError, Profile, ReasoningCategory, TaskType, ValidationMode};
use crate::llm::LlmContext;
use crate::modelio::{ModelError, Structured};

pub const DEFAULT_CANDIDATES: usize = 3;
const SYSTEM: &str = "treegen/system";

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Twin(#[from] DtError),
    #[error("twin has no instances to select from")]
    EmptyTwin,
    #[error("invalid reasoning tree: {0}")]
    InvalidTree(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateObject {
    pub instance_id: String,
    pub rank: u32,
    pub rationale: String,
    pub first_seen: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningNode {
    pub node_id: String,
    /// An instance id, or a label for a derived entity such as a body part.
    pub entity: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub is_root: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningEdge {
    pub from: String,
    pub to: String,
    pub kind: ReasoningCategory,
    pub relation: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timestamps: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTree {
    pub nodes: Vec<ReasoningNode>,
    pub edges: Vec<ReasoningEdge>,
    pub root_id: String,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSubtree {
    pub nodes: Vec<ReasoningNode>,
    pub edges: Vec<ReasoningEdge>,
    pub root_id: String,
    pub depth: u32,
    pub level: u8,
}

impl ReasoningTree {
    pub fn node(&self, id: &str) -> Option<&ReasoningNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn root(&self) -> &ReasoningNode {
        self.node(&self.root_id).expect("root node present")
    }
}

impl LevelSubtree {
    pub fn node(&self, id: &str) -> Option<&ReasoningNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    /// Edge kinds present in the subtree.
    pub fn kinds(&self) -> BTreeSet<ReasoningCategory> {
        self.edges.iter().map(|e| e.kind).collect()
    }
}

/// Shortest-path distance from `root` along directed edges.
pub fn bfs_distances(root: &str, edges: &[ReasoningEdge]) -> BTreeMap<String, u32> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in edges {
        adj.entry(e.from.as_str()).or_default().push(e.to.as_str());
    }
    let mut dist = BTreeMap::from([(root.to_string(), 0u32)]);
    let mut queue = VecDeque::from([root.to_string()]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        for v in adj.get(u.as_str()).into_iter().flatten() {
            if !dist.contains_key(*v) {
                dist.insert(v.to_string(), d + 1);
                queue.push_back(v.to_string());
            }
        }
    }
    dist
}

/// A node on a directed cycle, if any.
fn find_cycle(nodes: &BTreeSet<&str>, edges: &[(&str, &str)]) -> Option<String> {
    let mut indeg: BTreeMap<&str, usize> = nodes.iter().map(|n| (*n, 0)).collect();
    for (_, to) in edges {
        *indeg.entry(to).or_default() += 1;
    }
    let mut queue: VecDeque<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut removed = 0;
    while let Some(u) = queue.pop_front() {
        removed += 1;
        for (from, to) in edges {
            if *from == u {
                let d = indeg.get_mut(to).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(to);
                }
            }
        }
    }
    (removed < indeg.len()).then(|| {
        indeg
            .into_iter()
            .find(|(_, d)| *d > 0)
            .map(|(n, _)| n.to_string())
            .unwrap_or_default()
    })
}

/// Nodes within `level` steps of the root and the edges among them.
pub fn extract_level_subtree(tree: &ReasoningTree, level: u8) -> LevelSubtree {
    debug_assert!((1..=4).contains(&level));
    let dist = bfs_distances(&tree.root_id, &tree.edges);
    let keep: BTreeSet<&str> = dist
        .iter()
        .filter(|(_, d)| **d <= level as u32)
        .map(|(n, _)| n.as_str())
        .collect();
    let nodes: Vec<ReasoningNode> = tree
        .nodes
        .iter()
        .filter(|n| keep.contains(n.node_id.as_str()))
        .cloned()
        .collect();
    let edges: Vec<ReasoningEdge> = tree
        .edges
        .iter()
        .filter(|e| keep.contains(e.from.as_str()) && keep.contains(e.to.as_str()))
        .cloned()
        .collect();
    let depth = keep.iter().map(|n| dist[*n]).max().unwrap_or(0);
    LevelSubtree { nodes, edges, root_id: tree.root_id.clone(), depth, level }
}

fn twin_payload(twin: &DigitalTwin) -> Result<String, GenerationError> {
    Ok(serialize_twin_with(twin, Profile::Prompt, ValidationMode::Partial)?)
}

fn candidate_payload(c: &CandidateObject, twin: &DigitalTwin) -> String {
    serde_json::json!({
        "instance_id": c.instance_id,
        "rationale": c.rationale,
        "descriptions": twin.descriptions(&c.instance_id),
        "first_seen": c.first_seen,
    })
    .to_string()
}

#[derive(Debug, Deserialize)]
struct SelectReply {
    candidates: Vec<SelectItem>,
}

#[derive(Debug, Deserialize)]
struct SelectItem {
    instance_id: String,
    #[serde(default)]
    rank: Option<u32>,
    #[serde(default)]
    rationale: String,
}

impl Structured for SelectReply {
    const SHAPE: &'static str = r#"{"candidates": [{"instance_id": string, "rank": integer, "rationale": string}]}"#;
}

/// Ranked candidates for `twin`, at most `n`, restricted to ids the twin knows.
pub fn select_objects(
    ctx: &LlmContext,
    twin: &DigitalTwin,
    n: usize,
) -> Result<(Vec<CandidateObject>, Vec<String>), GenerationError> {
    let known = twin.instance_ids();
    if known.is_empty() {
        return Err(GenerationError::EmptyTwin);
    }
    let reply: SelectReply = ctx.ask(
        Some(SYSTEM),
        "treegen/select_objects",
        &[("n", &n.to_string()), ("twin", &twin_payload(twin)?)],
    )?;
    Ok(rank_candidates(twin, reply.candidates, n))
}

fn rank_candidates(twin: &DigitalTwin, items: Vec<SelectItem>, n: usize) -> (Vec<CandidateObject>, Vec<String>) {
    let known = twin.instance_ids();
    let mut warnings = Vec::new();
    let mut seen = BTreeSet::new();
    let mut pool = Vec::new();
    for (pos, item) in items.into_iter().enumerate() {
        if !known.contains(&item.instance_id) {
            warnings.push(format!("model named unknown instance {}; dropped", item.instance_id));
            continue;
        }
        if !seen.insert(item.instance_id.clone()) {
            continue;
        }
        let Some(first_seen) = twin.visible_frames(&item.instance_id).first().copied() else {
            warnings.push(format!("instance {} is never visible; dropped", item.instance_id));
            continue;
        };
        pool.push((item.rank.unwrap_or(pos as u32 + 1), first_seen, item.instance_id, item.rationale));
    }
    pool.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let out = pool
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, (_, first_seen, instance_id, rationale))| CandidateObject {
            instance_id,
            rank: i as u32 + 1,
            rationale,
            first_seen,
        })
        .collect();
    (out, warnings)
}

#[derive(Debug, Deserialize)]
struct AssignReply {
    task: String,
    #[serde(default)]
    #[allow(dead_code)]
    reason: String,
}

impl Structured for AssignReply {
    const SHAPE: &'static str = r#"{"task": "segmentation" | "grounding" | "summary" | "vqa", "reason": string}"#;

    fn check(&self) -> Result<(), String> {
        self.task.trim().to_lowercase().parse::<TaskType>().map(|_| ())
    }
}

/// Task type for a candidate. An answer still off-vocabulary after the repair
/// turn falls back to segmentation with a warning.
pub fn assign_task_type(
    ctx: &LlmContext,
    twin: &DigitalTwin,
    candidate: &CandidateObject,
) -> Result<(TaskType, Option<String>), GenerationError> {
    let reply = ctx.ask::<AssignReply>(
        Some(SYSTEM),
        "treegen/assign_task",
        &[("candidate", &candidate_payload(candidate, twin)), ("twin", &twin_payload(twin)?)],
    );
    match reply {
        Ok(r) => Ok((r.task.trim().to_lowercase().parse().expect("checked"), None)),
        Err(ModelError::Generation { second_raw, .. }) => Ok((
            TaskType::Segmentation,
            Some(format!(
                "task assignment for {} unusable ({second_raw:?}); defaulting to segmentation",
                candidate.instance_id
            )),
        )),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Deserialize)]
struct TreeReply {
    nodes: Vec<TreeReplyNode>,
    edges: Vec<TreeReplyEdge>,
}

#[derive(Debug, Deserialize)]
struct TreeReplyNode {
    id: String,
    entity: String,
    #[serde(default)]
    attributes: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct TreeReplyEdge {
    from: String,
    to: String,
    kind: String,
    relation: String,
    #[serde(default)]
    timestamps: Vec<u32>,
}

impl Structured for TreeReply {
    const SHAPE: &'static str = r#"{"nodes": [{"id": string, "entity": string, "attributes": [string]}], "edges": [{"from": string, "to": string, "kind": "semantic" | "spatial" | "temporal", "relation": string, "timestamps": [integer]}]}"#;

    fn check(&self) -> Result<(), String> {
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.entity.trim().is_empty() {
                return Err(format!("node {} has an empty entity", n.id));
            }
            if !ids.insert(n.id.as_str()) {
                return Err(format!("duplicate node id {}", n.id));
            }
        }
        for e in &self.edges {
            if !ids.contains(e.from.as_str()) || !ids.contains(e.to.as_str()) {
                return Err(format!("edge {} -> {} names an unknown node", e.from, e.to));
            }
            e.kind.trim().to_lowercase().parse::<ReasoningCategory>()?;
        }
        Ok(())
    }
}

impl TreeReply {
    /// Cycles left once edges into the target's node are discarded.
    fn check_acyclic(&self, target: &str) -> Result<(), String> {
        let root = self.nodes.iter().find(|n| n.entity == target).map(|n| n.id.as_str());
        let ids: BTreeSet<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        let pairs: Vec<(&str, &str)> = self
            .edges
            .iter()
            .filter(|e| Some(e.to.as_str()) != root)
            .map(|e| (e.from.as_str(), e.to.as_str()))
            .collect();
        match find_cycle(&ids, &pairs) {
            Some(n) => Err(format!("graph has a cycle through node {n}")),
            None => Ok(()),
        }
    }
}

/// Lowercase with spaces and hyphens folded to underscores: "in front of" -> "in_front_of".
pub fn normalize_relation(relation: &str) -> String {
    relation
        .trim()
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

/// Why an edge is not supported by the twin, or `None` when it is.
fn unjustified(edge: &ReasoningEdge, nodes: &BTreeMap<&str, &ReasoningNode>, twin: &DigitalTwin) -> Option<String> {
    let from = nodes[edge.from.as_str()];
    let to = nodes[edge.to.as_str()];
    let known = twin.instance_ids();
    match edge.kind {
        ReasoningCategory::Spatial => {
            if !known.contains(&from.entity) || !known.contains(&to.entity) {
                return Some("spatial edge between non-instance entities".into());
            }
            let word = normalize_relation(&edge.relation);
            let found = twin.frames.iter().any(|f| {
                f.relation(&from.entity, &to.entity)
                    .is_some_and(|r| r.words().contains(&word.as_str()))
            });
            (!found).then(|| format!("relation {word} never recorded for {} and {}", from.entity, to.entity))
        }
        ReasoningCategory::Temporal => {
            let stamps: BTreeSet<u32> = edge
                .timestamps
                .iter()
                .copied()
                .filter(|t| twin.frame(*t).is_some())
                .collect();
            if stamps.len() >= 2 {
                return None;
            }
            if known.contains(&from.entity) && known.contains(&to.entity) {
                let a = twin.visible_frames(&from.entity);
                let b = twin.visible_frames(&to.entity);
                let span = |v: &[u32]| (v.first().copied(), v.last().copied());
                if !a.is_empty() && !b.is_empty() && span(&a) != span(&b) {
                    return None;
                }
            }
            Some("temporal edge without distinct timestamps".into())
        }
        ReasoningCategory::Semantic => {
            let has_text = to.attributes.iter().any(|a| !a.trim().is_empty())
                || normalize_relation(&edge.relation) == "part_of"
                || (known.contains(&to.entity) && !twin.descriptions(&to.entity).is_empty());
            (!has_text).then(|| "semantic edge without attribute text".into())
        }
    }
}

/// Roots the raw graph at the candidate, prunes unsupported edges and unreachable nodes.
fn finalize_tree(
    reply: TreeReply,
    twin: &DigitalTwin,
    candidate: &CandidateObject,
) -> Result<(ReasoningTree, Vec<String>), GenerationError> {
    let root_id = reply
        .nodes
        .iter()
        .find(|n| n.entity == candidate.instance_id)
        .map(|n| n.id.clone())
        .ok_or_else(|| GenerationError::InvalidTree(format!("no node for target {}", candidate.instance_id)))?;
    let nodes: Vec<ReasoningNode> = reply
        .nodes
        .into_iter()
        .map(|n| ReasoningNode {
            is_root: n.id == root_id,
            node_id: n.id,
            entity: n.entity.trim().to_string(),
            attributes: n.attributes.into_iter().filter(|a| !a.trim().is_empty()).collect(),
        })
        .collect();
    let by_id: BTreeMap<&str, &ReasoningNode> = nodes.iter().map(|n| (n.node_id.as_str(), n)).collect();
    let mut warnings = Vec::new();
    let mut edges = Vec::new();
    for e in reply.edges {
        let edge = ReasoningEdge {
            kind: e.kind.trim().to_lowercase().parse().expect("checked"),
            relation: normalize_relation(&e.relation),
            from: e.from,
            to: e.to,
            timestamps: e.timestamps,
        };
        if edge.to == root_id {
            warnings.push(format!("edge {} -> {} enters the root; pruned", edge.from, edge.to));
            continue;
        }
        if let Some(why) = unjustified(&edge, &by_id, twin) {
            warnings.push(format!("edge {} -> {} pruned: {why}", edge.from, edge.to));
            continue;
        }
        if edges.iter().any(|x: &ReasoningEdge| x.from == edge.from && x.to == edge.to) {
            continue;
        }
        edges.push(edge);
    }
    let dist = bfs_distances(&root_id, &edges);
    let (nodes, dropped): (Vec<_>, Vec<_>) = nodes.into_iter().partition(|n| dist.contains_key(&n.node_id));
    for n in dropped {
        warnings.push(format!("node {} unreachable from the root; dropped", n.node_id));
    }
    edges.retain(|e| dist.contains_key(&e.from) && dist.contains_key(&e.to));
    let depth = dist.values().copied().max().unwrap_or(0);
    if depth == 0 {
        return Err(GenerationError::InvalidTree("no justified edge leaves the root".into()));
    }
    let ids: BTreeSet<&str> = nodes.iter().map(|n| n.node_id.as_str()).collect();
    let pairs: Vec<(&str, &str)> = edges.iter().map(|e| (e.from.as_str(), e.to.as_str())).collect();
    if let Some(n) = find_cycle(&ids, &pairs) {
        return Err(GenerationError::InvalidTree(format!("cycle through {n}")));
    }
    Ok((ReasoningTree { nodes, edges, root_id, depth }, warnings))
}

/// Asks the model for a tree rooted at the candidate and validates it against the twin.
pub fn build_reasoning_tree(
    ctx: &LlmContext,
    twin: &DigitalTwin,
    candidate: &CandidateObject,
) -> Result<(ReasoningTree, Vec<String>), GenerationError> {
    let target = candidate.instance_id.as_str();
    let reply: TreeReply = ctx.ask_checked(
        Some(SYSTEM),
        "treegen/build_tree",
        &[
            ("depth", "4"),
            ("candidate", &candidate_payload(candidate, twin)),
            ("twin", &twin_payload(twin)?),
        ],
        &|r: &TreeReply| r.check_acyclic(target),
    )?;
    finalize_tree(reply, twin, candidate)
}
