use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::benchgen::mask_box;
use crate::dtcore::{serialize_twin_with, DigitalTwin, GroundTruth, Profile, ValidationMode};
use crate::llm::LlmContext;
use crate::modelio::{cosine, Embedder, Structured};
use crate::text::normalize_tokens;

use super::{AgentError, Op, OpNode, Plan};

pub const ATTRIBUTE_SIMILARITY: f64 = 0.8;
/// Motion magnitude in pixels per frame above which an instance counts as moving.
pub const MOTION_THRESHOLD: f64 = 1.0;
pub const NO_INSTANCE: &str = "No instance satisfies the query.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NodeValue {
    Instances(BTreeSet<String>),
    Output(GroundTruth),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub output: GroundTruth,
    /// Every node's value, in execution order.
    pub trace: Vec<(String, NodeValue)>,
}

/// Runs plans against an immutable twin.
#[derive(Clone, Copy, Default)]
pub struct Executor<'a> {
    pub llm: Option<&'a LlmContext>,
    pub embedder: Option<&'a dyn Embedder>,
}

#[derive(Debug, Deserialize)]
struct InstancesReply {
    instances: Vec<String>,
}

impl Structured for InstancesReply {
    const SHAPE: &'static str = r#"{"instances": [instance_id]}"#;
}

#[derive(Debug, Deserialize)]
struct TextReply {
    text: String,
}

impl Structured for TextReply {
    const SHAPE: &'static str = r#"{"text": string}"#;

    fn check(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            Err("text is empty".into())
        } else {
            Ok(())
        }
    }
}

fn padded(text: &str) -> String {
    format!(" {} ", normalize_tokens(text).join(" "))
}

impl<'a> Executor<'a> {
    pub fn new(llm: Option<&'a LlmContext>, embedder: Option<&'a dyn Embedder>) -> Self {
        Self { llm, embedder }
    }

    pub fn execute(&self, plan: &Plan, twin: &DigitalTwin, query: &str) -> Result<Execution, AgentError> {
        let mut values: BTreeMap<&str, NodeValue> = BTreeMap::new();
        let mut trace = Vec::new();
        for i in plan.execution_order() {
            let node = &plan.nodes[i];
            let inputs: Vec<&BTreeSet<String>> = node
                .inputs
                .iter()
                .map(|id| match &values[id.as_str()] {
                    NodeValue::Instances(s) => Ok(s),
                    NodeValue::Output(_) => Err(AgentError::node(node, format!("input {id} is not an instance set"))),
                })
                .collect::<Result<_, _>>()?;
            let value = self.run_node(node, &inputs, twin, query)?;
            trace.push((node.node_id.clone(), value.clone()));
            values.insert(node.node_id.as_str(), value);
        }
        match values.remove(plan.sink().node_id.as_str()) {
            Some(NodeValue::Output(output)) => Ok(Execution { output, trace }),
            _ => Err(AgentError::node(plan.sink(), "sink produced no output".into())),
        }
    }

    fn run_node(
        &self,
        node: &OpNode,
        inputs: &[&BTreeSet<String>],
        twin: &DigitalTwin,
        query: &str,
    ) -> Result<NodeValue, AgentError> {
        let all = twin.instance_ids();
        let first = || inputs.first().map_or(all.clone(), |s| (*s).clone());
        let param = |k: &str| node.param(k).unwrap_or_default();
        let set = match node.op {
            Op::SelectInstancesByAttribute => self.select_by_attribute(node, &first(), twin, param("attribute"))?,
            Op::FilterBySpatialRelation => filter_spatial(inputs[0], inputs[1], twin, param("relation")),
            Op::FilterByTemporalEvent => filter_temporal(node, inputs[0], twin)?,
            Op::ResolvePart => resolve_part(inputs[0], twin, param("part"))?,
            Op::LlmFallback => {
                let scope: BTreeSet<String> =
                    if inputs.is_empty() { all.clone() } else { inputs.iter().flat_map(|s| s.iter().cloned()).collect() };
                let reply: InstancesReply = self.reason(node, twin, param("instruction"), &scope)?;
                reply.instances.into_iter().filter(|id| scope.contains(id)).collect()
            }
            Op::AggregateDescribe | Op::AnswerQuestion => {
                let scope = inputs[0];
                if scope.is_empty() {
                    return Ok(NodeValue::Output(GroundTruth::Text(NO_INSTANCE.into())));
                }
                let instruction = if node.op == Op::AggregateDescribe {
                    format!("Write a short summary of what these instances do over the video, as asked by: {query}")
                } else {
                    let q = node.param("question").unwrap_or(query);
                    format!("Answer the question using the video: {q}")
                };
                let reply: TextReply = self.reason(node, twin, &instruction, scope)?;
                return Ok(NodeValue::Output(GroundTruth::Text(reply.text.trim().to_string())));
            }
            Op::EmitMasks => return emit(node, inputs[0], twin, false),
            Op::EmitBoxes => return emit(node, inputs[0], twin, true),
        };
        Ok(NodeValue::Instances(set))
    }

    fn select_by_attribute(
        &self,
        node: &OpNode,
        candidates: &BTreeSet<String>,
        twin: &DigitalTwin,
        attribute: &str,
    ) -> Result<BTreeSet<String>, AgentError> {
        let needle = padded(attribute);
        let mut out = BTreeSet::new();
        for id in candidates {
            let descs = twin.descriptions(id);
            if descs.iter().any(|d| padded(d).contains(&needle)) {
                out.insert(id.clone());
                continue;
            }
            if let (Some(e), false) = (self.embedder, descs.is_empty()) {
                let mut texts = vec![attribute.to_string()];
                texts.extend(descs.iter().map(|d| d.to_string()));
                let v = e.embed(&texts).map_err(|err| AgentError::node(node, err.to_string()))?;
                if v[1..].iter().any(|d| cosine(&v[0], d) >= ATTRIBUTE_SIMILARITY) {
                    out.insert(id.clone());
                }
            }
        }
        Ok(out)
    }

    fn reason<T: Structured>(
        &self,
        node: &OpNode,
        twin: &DigitalTwin,
        instruction: &str,
        scope: &BTreeSet<String>,
    ) -> Result<T, AgentError> {
        let llm = self.llm.ok_or_else(|| AgentError::node(node, "no language model configured".into()))?;
        let twin_text = serialize_twin_with(twin, Profile::Prompt, ValidationMode::Partial)?;
        let instances: Vec<_> = scope
            .iter()
            .map(|id| json!({ "instance_id": id, "descriptions": twin.descriptions(id) }))
            .collect();
        let instances = serde_json::to_string(&instances).expect("instances serialize");
        llm.ask(
            None,
            "agent/reason",
            &[("instruction", instruction), ("instances", &instances), ("twin", &twin_text), ("shape", T::SHAPE)],
        )
        .map_err(|e| AgentError::node(node, e.to_string()))
    }
}

fn filter_spatial(
    candidates: &BTreeSet<String>,
    references: &BTreeSet<String>,
    twin: &DigitalTwin,
    relation: &str,
) -> BTreeSet<String> {
    candidates
        .iter()
        .filter(|a| {
            references.iter().any(|b| {
                a != &b
                    && twin
                        .frames
                        .iter()
                        .any(|f| f.relation(a, b).is_some_and(|r| r.words().contains(&relation)))
            })
        })
        .cloned()
        .collect()
}

fn filter_temporal(node: &OpNode, candidates: &BTreeSet<String>, twin: &DigitalTwin) -> Result<BTreeSet<String>, AgentError> {
    let frame: Option<u32> = node.param("frame").and_then(|f| f.parse().ok());
    let event = node.param("event").unwrap_or_default();
    let mut out = BTreeSet::new();
    for id in candidates {
        let visible = twin.visible_frames(id);
        let keep = match (event, frame) {
            ("appears_after", Some(f)) => visible.first().is_some_and(|t| *t > f),
            ("disappears_before", Some(f)) => visible.last().is_some_and(|t| *t < f),
            ("present_at", Some(f)) => visible.contains(&f),
            ("moving" | "static", _) => {
                let mut speeds = Vec::new();
                for t in &visible {
                    let inst = &twin.frame(*t).expect("visible frame exists").instances[id];
                    let vf = inst.visual_features.as_ref().ok_or_else(|| {
                        AgentError::node(node, format!("{id} has no visual features at frame {t}"))
                    })?;
                    speeds.push(vf.motion[0].hypot(vf.motion[1]));
                }
                let moving = speeds.iter().any(|s| *s >= MOTION_THRESHOLD);
                !visible.is_empty() && (moving == (event == "moving"))
            }
            _ => return Err(AgentError::node(node, format!("unsupported temporal event {event:?}"))),
        };
        if keep {
            out.insert(id.clone());
        }
    }
    Ok(out)
}

fn overlaps(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> bool {
    a.0 < b.0 + b.2 && b.0 < a.0 + a.2 && a.1 < b.1 + b.3 && b.1 < a.1 + a.3
}

/// Instances described as `part` whose box overlaps an owner's box in some
/// frame. An owner without such an instance stands in for its own part.
fn resolve_part(owners: &BTreeSet<String>, twin: &DigitalTwin, part: &str) -> Result<BTreeSet<String>, AgentError> {
    let needle = padded(part);
    let parts: Vec<String> = twin
        .instance_ids()
        .into_iter()
        .filter(|id| twin.descriptions(id).iter().any(|d| padded(d).contains(&needle)))
        .collect();
    let mut out = BTreeSet::new();
    for owner in owners {
        let mut found = false;
        for p in parts.iter().filter(|p| *p != owner) {
            let touches = twin.frames.iter().any(|f| {
                let bbox = |id: &str| f.instances.get(id).and_then(|i| i.mask_rle()).and_then(|m| m.bounding_box());
                matches!((bbox(owner), bbox(p)), (Some(a), Some(b)) if overlaps(a, b))
            });
            if touches {
                out.insert(p.clone());
                found = true;
            }
        }
        if !found {
            out.insert(owner.clone());
        }
    }
    Ok(out)
}

fn emit(node: &OpNode, selected: &BTreeSet<String>, twin: &DigitalTwin, boxes: bool) -> Result<NodeValue, AgentError> {
    let mut masks = BTreeMap::new();
    let mut box_seq = BTreeMap::new();
    for f in &twin.frames {
        let mut ms = Vec::new();
        for id in selected {
            let Some(inst) = f.instances.get(id) else { continue };
            let rle = inst
                .mask_rle()
                .ok_or_else(|| AgentError::node(node, format!("mask of {id} at frame {} is not loaded", f.timestamp)))?;
            if !rle.is_empty() {
                ms.push(rle.clone());
            }
        }
        box_seq.insert(f.timestamp, ms.iter().filter_map(mask_box).collect::<Vec<_>>());
        masks.insert(f.timestamp, ms);
    }
    Ok(NodeValue::Output(if boxes {
        GroundTruth::BoxSequence(box_seq)
    } else {
        GroundTruth::MaskSequence(masks)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::plan::validate_graph;
    use crate::dtcore::testing::twin_with_frames;
    use crate::dtcore::TaskType;
    use crate::llm::testing::scripted;
    use crate::modelio::HashEmbedder;

    fn n(id: &str, op: Op, params: &[(&str, &str)], inputs: &[&str]) -> OpNode {
        OpNode {
            node_id: id.into(),
            op,
            params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn plan(task: TaskType, nodes: Vec<OpNode>) -> Plan {
        validate_graph(task, &nodes).unwrap();
        Plan::new(task, nodes).unwrap()
    }

    fn selected(e: &Execution, node: &str) -> BTreeSet<String> {
        match &e.trace.iter().find(|(id, _)| id == node).unwrap().1 {
            NodeValue::Instances(s) => s.clone(),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn attribute_substring_then_masks() {
        let twin = twin_with_frames(3);
        let p = plan(
            TaskType::Segmentation,
            vec![
                n("a", Op::SelectInstancesByAttribute, &[("attribute", "shaggy coat")], &[]),
                n("m", Op::EmitMasks, &[], &["a"]),
            ],
        );
        let e = Executor::default().execute(&p, &twin, "q").unwrap();
        assert_eq!(selected(&e, "a"), ["obj_001".to_string()].into());
        let GroundTruth::MaskSequence(m) = e.output else { panic!() };
        for f in &twin.frames {
            assert_eq!(m[&f.timestamp], vec![f.instances["obj_001"].mask_rle().unwrap().clone()]);
        }
    }

    #[test]
    fn spatial_filter_uses_relations() {
        let twin = twin_with_frames(2);
        let p = plan(
            TaskType::Grounding,
            vec![
                n("all", Op::LlmFallback, &[("instruction", "every object")], &[]),
                n("car", Op::SelectInstancesByAttribute, &[("attribute", "sedan")], &[]),
                n("f", Op::FilterBySpatialRelation, &[("relation", "in_front_of")], &["all", "car"]),
                n("b", Op::EmitBoxes, &[], &["f"]),
            ],
        );
        let ctx = scripted(&[r#"{"instances":["obj_001","obj_002","obj_999"]}"#]);
        let e = Executor::new(Some(&ctx), None).execute(&p, &twin, "q").unwrap();
        assert_eq!(selected(&e, "all").len(), 2);
        assert_eq!(selected(&e, "f"), ["obj_001".to_string()].into());
        let GroundTruth::BoxSequence(b) = e.output else { panic!() };
        assert_eq!(b[&1].len(), 1);

        let behind = plan(
            TaskType::Grounding,
            vec![
                n("bear", Op::SelectInstancesByAttribute, &[("attribute", "bear")], &[]),
                n("car", Op::SelectInstancesByAttribute, &[("attribute", "sedan")], &[]),
                n("f", Op::FilterBySpatialRelation, &[("relation", "behind")], &["car", "bear"]),
                n("b", Op::EmitBoxes, &[], &["f"]),
            ],
        );
        let e = Executor::default().execute(&behind, &twin, "q").unwrap();
        assert_eq!(selected(&e, "f"), ["obj_002".to_string()].into());
    }

    #[test]
    fn temporal_filters() {
        let mut twin = twin_with_frames(4);
        for f in twin.frames.iter_mut().filter(|f| f.timestamp < 3) {
            f.instances.remove("obj_002");
            f.relations.clear();
        }
        twin.frames[3].instances.get_mut("obj_001").unwrap().visual_features.as_mut().unwrap().motion = [2.0, 0.0];
        let run = |event: &str, frame: &str| {
            let p = plan(
                TaskType::Segmentation,
                vec![
                    n("a", Op::LlmFallback, &[("instruction", "x")], &[]),
                    n("t", Op::FilterByTemporalEvent, &[("event", event), ("frame", frame)], &["a"]),
                    n("m", Op::EmitMasks, &[], &["t"]),
                ],
            );
            let ctx = scripted(&[r#"{"instances":["obj_001","obj_002"]}"#]);
            selected(&Executor::new(Some(&ctx), None).execute(&p, &twin, "q").unwrap(), "t")
        };
        let one = |s: &str| BTreeSet::from([s.to_string()]);
        assert_eq!(run("appears_after", "1"), one("obj_002"));
        assert_eq!(run("present_at", "2"), one("obj_001"));
        assert_eq!(run("disappears_before", "4"), BTreeSet::new());
        assert_eq!(run("moving", ""), one("obj_001"));
        assert_eq!(run("static", ""), one("obj_002"));
    }

    #[test]
    fn paraphrase_falls_back_to_embeddings() {
        let twin = twin_with_frames(1);
        let p = plan(
            TaskType::Segmentation,
            vec![
                n("a", Op::SelectInstancesByAttribute, &[("attribute", "A red sedan!")], &[]),
                n("m", Op::EmitMasks, &[], &["a"]),
            ],
        );
        let e = Executor::default().execute(&p, &twin, "q").unwrap();
        assert_eq!(selected(&e, "a"), ["obj_002".to_string()].into());
        let p = plan(
            TaskType::Segmentation,
            vec![
                n("a", Op::SelectInstancesByAttribute, &[("attribute", "sedan red a")], &[]),
                n("m", Op::EmitMasks, &[], &["a"]),
            ],
        );
        // bag-of-tokens embedding: same tokens, different order
        let emb = HashEmbedder::new(64);
        let e = Executor::new(None, Some(&emb)).execute(&p, &twin, "q").unwrap();
        assert_eq!(selected(&e, "a"), ["obj_002".to_string()].into());
        let e = Executor::default().execute(&p, &twin, "q").unwrap();
        assert!(selected(&e, "a").is_empty());
    }

    #[test]
    fn empty_selection_is_a_valid_answer() {
        let twin = twin_with_frames(2);
        let p = plan(
            TaskType::Vqa,
            vec![
                n("a", Op::SelectInstancesByAttribute, &[("attribute", "giraffe")], &[]),
                n("q", Op::AnswerQuestion, &[], &["a"]),
            ],
        );
        let e = Executor::default().execute(&p, &twin, "q").unwrap();
        assert_eq!(e.output, GroundTruth::Text(NO_INSTANCE.into()));
        let p = plan(
            TaskType::Segmentation,
            vec![
                n("a", Op::SelectInstancesByAttribute, &[("attribute", "giraffe")], &[]),
                n("m", Op::EmitMasks, &[], &["a"]),
            ],
        );
        let GroundTruth::MaskSequence(m) = Executor::default().execute(&p, &twin, "q").unwrap().output else {
            panic!()
        };
        assert!(m.values().all(Vec::is_empty) && m.len() == 2);
    }

    #[test]
    fn answers_come_from_the_model() {
        let twin = twin_with_frames(2);
        let p = plan(
            TaskType::Vqa,
            vec![
                n("a", Op::SelectInstancesByAttribute, &[("attribute", "bear")], &[]),
                n("q", Op::AnswerQuestion, &[("question", "What is the bear near?")], &["a"]),
            ],
        );
        let ctx = scripted(&[r#"{"text":"A red car."}"#]);
        let e = Executor::new(Some(&ctx), None).execute(&p, &twin, "q").unwrap();
        assert_eq!(e.output, GroundTruth::Text("A red car.".into()));
        let sent = &ctx.client.transcript().records()[0];
        assert!(serde_json::to_string(&sent.request).unwrap().contains("What is the bear near?"));
        assert!(matches!(Executor::default().execute(&p, &twin, "q"), Err(AgentError::Node { .. })));
    }

    #[test]
    fn part_resolution() {
        let mut twin = twin_with_frames(1);
        let f = &mut twin.frames[0];
        let mut head = f.instances["obj_001"].clone();
        head.instance_id = "obj_003".into();
        head.description = Some("the head of a bear".into());
        f.instances.insert("obj_003".into(), head);
        let owners: BTreeSet<String> = ["obj_001".to_string(), "obj_002".to_string()].into();
        let got = resolve_part(&owners, &twin, "head").unwrap();
        assert_eq!(got, ["obj_002".to_string(), "obj_003".to_string()].into());
    }
}
