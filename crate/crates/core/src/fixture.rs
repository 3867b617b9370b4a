//! Synthetic fixture: two scripted videos and a rule-based stand-in for the
//! generation model.
//!
//! [`FixtureLlm`] reads the tagged sections of each prompt (`<twin>`,
//! `<candidate>`, `<subtree>`, `<query>`) and answers from their content
//! alone, so a full benchmark run is deterministic and needs no network.
//! Task types follow caption keywords: "outline" gives segmentation,
//! "position" grounding, "story" summary and "interacting" vqa.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::modelio::{ChatBackend, ChatRequest, ChatResponse, ModelError, Role};
use crate::perception::mock::{ScriptedObject, ScriptedScene};
use crate::prompts::section;

pub const FIXTURE_FRAMES: u32 = 8;
pub const SCRIPT_FILE: &str = "script.json";

/// The two fixture videos as `(video_id, scene)`.
pub fn fixture_scenes() -> Vec<(String, ScriptedScene)> {
    let mut a = ScriptedScene::new(32, 48)
        .with(
            ScriptedObject::new("a brown bear with a clear outline of its shaggy coat", [120, 80, 40], 200.0)
                .size(8, 8)
                .at(2.0, 14.0)
                .velocity(2.0, 0.0),
        )
        .with(ScriptedObject::new("a red car parked in a fixed position", [210, 30, 30], 60.0).size(12, 6).at(32.0, 4.0));
    a.scene_caption = "A forest clearing beside a gravel road.".into();
    a.video_caption = "A bear walks across a forest clearing past a parked car.".into();

    let mut b = ScriptedScene::new(32, 48)
        .with(
            ScriptedObject::new("a person in a blue coat interacting with a small dog", [40, 60, 200], 160.0)
                .size(6, 12)
                .at(8.0, 10.0),
        )
        .with(
            ScriptedObject::new("a small white dog at the centre of a playful story", [240, 240, 240], 120.0)
                .size(6, 5)
                .at(36.0, 20.0)
                .velocity(-2.0, 0.0)
                .visible(3, FIXTURE_FRAMES),
        );
    b.scene_caption = "A park lawn on a sunny afternoon.".into();
    b.video_caption = "A dog runs across a park lawn towards a person who plays with it.".into();
    vec![("fixture_a".into(), a), ("fixture_b".into(), b)]
}

/// Writes `videos/<id>/frame_NNNN.png` plus each scene's `script.json` under
/// `dir` and returns the video directories.
pub fn write_fixture_videos(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (id, scene) in fixture_scenes() {
        let vdir = dir.join("videos").join(&id);
        fs::create_dir_all(&vdir)?;
        for (i, frame) in scene.frames(FIXTURE_FRAMES).iter().enumerate() {
            frame
                .save(vdir.join(format!("frame_{:04}.png", i + 1)))
                .map_err(|e| std::io::Error::other(e.to_string()))?;
        }
        fs::write(vdir.join(SCRIPT_FILE), serde_json::to_string_pretty(&scene)?)?;
        out.push(vdir);
    }
    Ok(out)
}

pub const FIXTURE_CONFIG: &str = r#"[paths]
videos = "videos"
output = "out"
registry = "registry.json"

[perception]
keyframe_interval = 2

[generation]
dataset_id = "rvt-fixture"
model = "fixture"

[llm]
backend = "fixture"
"#;

/// Mock perception for every capability except features, which are computed.
pub fn fixture_registry() -> Value {
    json!({"adapters": [
        {"id": "mock-segmenter", "capability": "segmentation", "kind": "mock"},
        {"id": "mock-depth", "capability": "depth", "kind": "mock"},
        {"id": "mock-captioner", "capability": "captioning", "kind": "mock"},
        {"id": "classical-features", "capability": "features", "kind": "classical"},
    ]})
}

/// Writes a runnable workspace (videos, `registry.json`, `rvt.toml`) and returns the config path.
pub fn write_fixture(dir: &Path) -> std::io::Result<PathBuf> {
    write_fixture_videos(dir)?;
    fs::write(dir.join("registry.json"), serde_json::to_string_pretty(&fixture_registry())?)?;
    let config = dir.join("rvt.toml");
    fs::write(&config, FIXTURE_CONFIG)?;
    Ok(config)
}

/// Rule-based chat backend answering every prompt template of the toolkit.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixtureLlm;

impl ChatBackend for FixtureLlm {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ModelError> {
        let prompt = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let reply = respond(prompt).map_err(|message| ModelError::Generation { message, first_raw: String::new(), second_raw: String::new() })?;
        Ok(ChatResponse::stop(reply.to_string()))
    }
}

fn parsed(prompt: &str, tag: &str) -> Result<Value, String> {
    let text = section(prompt, tag).ok_or_else(|| format!("prompt has no <{tag}> section"))?;
    serde_json::from_str(text).map_err(|e| format!("<{tag}> is not JSON: {e}"))
}

fn respond(prompt: &str) -> Result<Value, String> {
    if prompt.contains("Identify the objects of interest") {
        select_objects(prompt)
    } else if prompt.contains("Choose the most appropriate reasoning task type") {
        assign_task(prompt)
    } else if prompt.contains("Build a reasoning tree") {
        build_tree(prompt)
    } else if prompt.contains("Write one implicit") {
        write_query(prompt)
    } else if prompt.contains("Check the query against the reasoning tree") {
        checklist(prompt)
    } else if prompt.contains("Write the ground-truth") {
        text_answer(prompt)
    } else if prompt.contains("Decompose the query into a reasoning graph") {
        plan(prompt)
    } else if prompt.contains("Instances in scope:") {
        reason(prompt)
    } else {
        Err("the fixture model does not recognise this prompt".into())
    }
}

/// `(instance_id, description, visible timestamps)` from a prompt-profile twin.
fn instances(twin: &Value) -> Vec<(String, String, Vec<u32>)> {
    let mut out: Vec<(String, String, Vec<u32>)> = Vec::new();
    for f in twin["frames"].as_array().into_iter().flatten() {
        let t = f["timestamp"].as_u64().unwrap_or(0) as u32;
        for (id, inst) in f["instances"].as_object().into_iter().flatten() {
            let visible = inst["area"].as_u64().unwrap_or(0) > 0;
            let desc = inst["description"].as_str().unwrap_or_default().to_string();
            match out.iter_mut().find(|(i, _, _)| i == id) {
                Some(e) => {
                    if e.1.is_empty() {
                        e.1 = desc;
                    }
                    if visible {
                        e.2.push(t);
                    }
                }
                None => out.push((id.clone(), desc, if visible { vec![t] } else { vec![] })),
            }
        }
    }
    out.sort_by_key(|(id, _, v)| (v.first().copied().unwrap_or(u32::MAX), id.clone()));
    out
}

fn select_objects(prompt: &str) -> Result<Value, String> {
    let twin = parsed(prompt, "twin")?;
    let n: usize = prompt
        .split("Return at most ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let cands: Vec<Value> = instances(&twin)
        .into_iter()
        .filter(|(_, _, v)| !v.is_empty())
        .take(n)
        .enumerate()
        .map(|(i, (id, desc, _))| json!({"instance_id": id, "rank": i + 1, "rationale": desc}))
        .collect();
    Ok(json!({ "candidates": cands }))
}

fn assign_task(prompt: &str) -> Result<Value, String> {
    let cand = parsed(prompt, "candidate")?;
    let text = cand["descriptions"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(Value::as_str)
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let task = [("outline", "segmentation"), ("position", "grounding"), ("story", "summary"), ("interacting", "vqa")]
        .iter()
        .find(|(k, _)| text.contains(k))
        .map_or("segmentation", |(_, t)| t);
    Ok(json!({"task": task, "reason": format!("caption suggests {task}")}))
}

fn inverse(word: &str) -> &str {
    match word {
        "in_front_of" => "behind",
        "behind" => "in_front_of",
        "left_of" => "right_of",
        "right_of" => "left_of",
        "above" => "below",
        "below" => "above",
        other => other,
    }
}

fn strip_article(s: &str) -> &str {
    let s = s.trim().trim_end_matches('.');
    for a in ["a ", "an ", "the "] {
        if let Some(rest) = s.strip_prefix(a) {
            return rest;
        }
    }
    s
}

/// Tree shape: root -> appearance (semantic), root -> neighbour (spatial),
/// neighbour -> its appearance (semantic), appearance -> visibility window
/// (temporal), window -> scene (semantic).
fn build_tree(prompt: &str) -> Result<Value, String> {
    let twin = parsed(prompt, "twin")?;
    let cand = parsed(prompt, "candidate")?;
    let target = cand["instance_id"].as_str().ok_or("candidate has no instance_id")?.to_string();
    let all = instances(&twin);
    let (_, desc, visible) = all.iter().find(|(id, _, _)| *id == target).ok_or("candidate not in twin")?;
    let mut nodes = vec![
        json!({"id": "n0", "entity": target}),
        json!({"id": "n1", "entity": "appearance", "attributes": [strip_article(desc)]}),
    ];
    let mut edges = vec![json!({"from": "n0", "to": "n1", "kind": "semantic", "relation": "has_attribute"})];

    let mut neighbour = None;
    'frames: for f in twin["frames"].as_array().into_iter().flatten() {
        for r in f["relations"].as_array().into_iter().flatten() {
            let r: Vec<&str> = r.as_array().into_iter().flatten().filter_map(Value::as_str).collect();
            if let [s, depth, _, o] = r[..] {
                if s == target {
                    neighbour = Some((o.to_string(), depth.to_string()));
                } else if o == target {
                    neighbour = Some((s.to_string(), inverse(depth).to_string()));
                }
                if neighbour.is_some() {
                    break 'frames;
                }
            }
        }
    }
    let mut last_attr = "n1";
    if let Some((other, word)) = neighbour {
        let other_desc = all.iter().find(|(id, _, _)| *id == other).map_or("", |e| e.1.as_str());
        nodes.push(json!({"id": "n2", "entity": other}));
        nodes.push(json!({"id": "n3", "entity": "neighbour appearance", "attributes": [strip_article(other_desc)]}));
        edges.push(json!({"from": "n0", "to": "n2", "kind": "spatial", "relation": word}));
        edges.push(json!({"from": "n2", "to": "n3", "kind": "semantic", "relation": "has_attribute"}));
        last_attr = "n3";
    }
    if let (Some(first), Some(last)) = (visible.first(), visible.last()) {
        if first != last {
            let scene = twin["frames"][0]["scene_description"].as_str().unwrap_or("an open scene");
            nodes.push(json!({"id": "n4", "entity": "visibility window", "attributes": [format!("frames {first} to {last}")]}));
            nodes.push(json!({"id": "n5", "entity": "scene", "attributes": [strip_article(scene)]}));
            edges.push(json!({"from": last_attr, "to": "n4", "kind": "temporal", "relation": "visible_during", "timestamps": [first, last]}));
            edges.push(json!({"from": "n4", "to": "n5", "kind": "semantic", "relation": "occurs_in"}));
        }
    }
    Ok(json!({ "nodes": nodes, "edges": edges }))
}

fn relation_phrase(word: &str) -> String {
    match word {
        "in_front_of" => "in front of".into(),
        "left_of" => "to the left of".into(),
        "right_of" => "to the right of".into(),
        "same_distance" => "at the same distance as".into(),
        "next_to" => "next to".into(),
        other => other.replace('_', " "),
    }
}

fn query_text(task: &str, sub: &Value) -> String {
    let nodes = sub["nodes"].as_array().cloned().unwrap_or_default();
    let attr = |id: &str| -> String {
        nodes
            .iter()
            .find(|n| n["node_id"] == id)
            .and_then(|n| n["attributes"][0].as_str())
            .unwrap_or_default()
            .to_string()
    };
    let edges = sub["edges"].as_array().cloned().unwrap_or_default();
    let has = |to: &str| edges.iter().any(|e| e["to"] == to);
    let mut phrase = attr("n1");
    if let Some(e) = edges.iter().find(|e| e["to"] == "n2") {
        let other = if has("n3") { attr("n3") } else { "another object".into() };
        phrase += &format!(" that is {} the {other}", relation_phrase(e["relation"].as_str().unwrap_or_default()));
    }
    if has("n4") {
        phrase += &format!(" while it stays in view for {}", attr("n4"));
    }
    if has("n5") {
        phrase += &format!(" within {}", attr("n5"));
    }
    match task {
        "segmentation" => format!("Segment the {phrase}."),
        "grounding" => format!("Locate the {phrase}."),
        "summary" => format!("Summarize what happens to the {phrase}."),
        _ => format!("What is the {phrase} doing?"),
    }
}

fn write_query(prompt: &str) -> Result<Value, String> {
    let sub = parsed(prompt, "subtree")?;
    let task = prompt
        .split("Write one implicit ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap_or("segmentation");
    let kinds: BTreeSet<&str> =
        sub["edges"].as_array().into_iter().flatten().filter_map(|e| e["kind"].as_str()).collect();
    Ok(json!({"query": query_text(task, &sub), "categories": kinds}))
}

fn checklist(prompt: &str) -> Result<Value, String> {
    let sub = parsed(prompt, "subtree")?;
    let mut elements: Vec<Value> = Vec::new();
    for n in sub["nodes"].as_array().into_iter().flatten() {
        elements.push(json!({"id": n["node_id"], "referenced": true}));
    }
    for e in sub["edges"].as_array().into_iter().flatten() {
        elements.push(json!({"id": e["id"], "referenced": true}));
    }
    Ok(json!({"elements": elements, "extraneous": false}))
}

fn text_answer(prompt: &str) -> Result<Value, String> {
    let twin = parsed(prompt, "twin")?;
    let sub = parsed(prompt, "subtree")?;
    let root = sub["root"].as_str().unwrap_or("n0");
    let entity = sub["nodes"]
        .as_array()
        .into_iter()
        .flatten()
        .find(|n| n["node_id"] == root)
        .and_then(|n| n["entity"].as_str())
        .unwrap_or_default();
    let all = instances(&twin);
    let (desc, visible) = all
        .iter()
        .find(|(id, _, _)| id == entity)
        .map(|(_, d, v)| (strip_article(d).to_string(), v.clone()))
        .unwrap_or_default();
    let span = match (visible.first(), visible.last()) {
        (Some(a), Some(b)) => format!("from frame {a} to frame {b}"),
        _ => "briefly".into(),
    };
    if prompt.contains("ground-truth vqa") {
        return Ok(json!({"text": format!("The {desc} stays in view {span}.")}));
    }
    let mut words: Vec<String> = format!(
        "{} The {desc} is the focus and stays in view {span}.",
        twin["metadata"]["description"].as_str().unwrap_or_default()
    )
    .split_whitespace()
    .map(str::to_string)
    .collect();
    let frames = twin["frames"].as_array().cloned().unwrap_or_default();
    let mut i = 0;
    while words.len() < 60 && !frames.is_empty() {
        let f = &frames[i % frames.len()];
        let line = format!(
            "At frame {}, {}",
            f["timestamp"],
            f["spatial_description"].as_str().unwrap_or("nothing changes.")
        );
        words.extend(line.split_whitespace().map(str::to_string));
        i += 1;
    }
    words.truncate(180);
    Ok(json!({"text": words.join(" ")}))
}

fn plan(prompt: &str) -> Result<Value, String> {
    let query = section(prompt, "query").ok_or("prompt has no <query> section")?;
    let (task, rest) = [
        ("Segment the ", "segmentation"),
        ("Locate the ", "grounding"),
        ("Summarize what happens to the ", "summary"),
        ("What is the ", "vqa"),
    ]
    .iter()
    .find_map(|(p, t)| query.strip_prefix(p).map(|r| (*t, r)))
    .unwrap_or(("vqa", query));
    let attribute = [" that is ", " while it stays", " within ", " doing?", "."]
        .iter()
        .filter_map(|d| rest.find(d))
        .min()
        .map_or(rest, |i| &rest[..i])
        .trim();
    let sink = match task {
        "segmentation" => json!({"node_id": "n2", "op": "emit_masks", "params": {}, "inputs": ["n1"]}),
        "grounding" => json!({"node_id": "n2", "op": "emit_boxes", "params": {}, "inputs": ["n1"]}),
        "summary" => json!({"node_id": "n2", "op": "aggregate_describe", "params": {}, "inputs": ["n1"]}),
        _ => json!({"node_id": "n2", "op": "answer_question", "params": {"question": query}, "inputs": ["n1"]}),
    };
    Ok(json!({
        "task": task,
        "nodes": [
            {"node_id": "n1", "op": "select_instances_by_attribute", "params": {"attribute": attribute}, "inputs": []},
            sink,
        ]
    }))
}

fn reason(prompt: &str) -> Result<Value, String> {
    let scope: Vec<Value> = prompt
        .lines()
        .find_map(|l| l.strip_prefix("Instances in scope: "))
        .and_then(|s| serde_json::from_str(s).ok())
        .unwrap_or_default();
    let shape = prompt.trim_end().lines().last().unwrap_or_default();
    if shape.contains(r#"{"instances""#) {
        let ids: Vec<&Value> = scope.iter().map(|i| &i["instance_id"]).collect();
        return Ok(json!({ "instances": ids }));
    }
    let descs: Vec<&str> = scope
        .iter()
        .filter_map(|i| i["descriptions"][0].as_str())
        .map(strip_article)
        .collect();
    Ok(json!({"text": format!("The {} stays in view.", descs.join(" and the "))}))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::{Message, SamplingParams};

    fn ask(prompt: &str) -> Value {
        let req = ChatRequest::new("m", vec![Message::user(prompt)], SamplingParams::default());
        serde_json::from_str(&FixtureLlm.chat(&req).unwrap().text).unwrap()
    }

    #[test]
    fn task_keywords() {
        let p = |d: &str| format!("Choose the most appropriate reasoning task type\n<candidate>\n{{\"descriptions\":[\"{d}\"]}}\n</candidate>");
        assert_eq!(ask(&p("a bear with a clear outline"))["task"], "segmentation");
        assert_eq!(ask(&p("a car in a fixed position"))["task"], "grounding");
        assert_eq!(ask(&p("the centre of a playful story"))["task"], "summary");
        assert_eq!(ask(&p("a person interacting with a dog"))["task"], "vqa");
    }

    #[test]
    fn planner_reads_the_query() {
        let v = ask("Decompose the query into a reasoning graph\n<query>\nLocate the red car parked in a fixed position that is behind the bear.\n</query>");
        assert_eq!(v["task"], "grounding");
        assert_eq!(v["nodes"][0]["params"]["attribute"], "red car parked in a fixed position");
    }

    #[test]
    fn unknown_prompt_is_a_generation_error() {
        let req = ChatRequest::new("m", vec![Message::user("hello")], SamplingParams::default());
        assert!(matches!(FixtureLlm.chat(&req), Err(ModelError::Generation { .. })));
    }

    #[test]
    fn fixture_videos_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let dirs = write_fixture_videos(dir.path()).unwrap();
        assert_eq!(dirs.len(), 2);
        let pngs = fs::read_dir(&dirs[0]).unwrap().filter(|e| {
            e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")
        });
        assert_eq!(pngs.count(), FIXTURE_FRAMES as usize);
        let scene: ScriptedScene = serde_json::from_str(&fs::read_to_string(dirs[1].join(SCRIPT_FILE)).unwrap()).unwrap();
        assert_eq!(scene, fixture_scenes()[1].1);
    }

    fn fixture_ctx() -> crate::llm::LlmContext {
        use crate::modelio::{ModelClient, Transcript, TranscriptMode};
        let client = ModelClient::new(TranscriptMode::Record, std::sync::Arc::new(Transcript::in_memory()))
            .with_chat(std::sync::Arc::new(FixtureLlm));
        crate::llm::LlmContext::new(std::sync::Arc::new(client), "fixture")
    }

    fn twin(i: usize) -> crate::dtcore::DigitalTwin {
        use crate::perception::{build_digital_twin, KeyframeInterval, PerceptionConfig};
        let (id, scene) = &fixture_scenes()[i];
        let config = PerceptionConfig { keyframe_interval: KeyframeInterval::Fixed(2), ..Default::default() };
        build_digital_twin(id, &scene.frames(FIXTURE_FRAMES), &config, &scene.adapters().0).unwrap().twin
    }

    #[test]
    fn benchmark_generation_over_fixture() {
        use crate::benchgen::{generate_video_samples, GenerationConfig};
        use crate::dtcore::TaskType;
        let ctx = fixture_ctx();
        let mut tasks = BTreeSet::new();
        for i in 0..2 {
            let out = generate_video_samples(&ctx, &twin(i), &GenerationConfig::default()).unwrap();
            assert_eq!(out.samples.len(), 8, "{:?}", out.warnings);
            for s in &out.samples {
                assert!(!s.query.contains("obj_"));
                tasks.insert(s.task);
            }
        }
        assert_eq!(tasks, [TaskType::Segmentation, TaskType::Grounding, TaskType::Summary, TaskType::Vqa].into());
    }

    #[test]
    fn agent_answers_fixture_query() {
        use crate::agent::{Executor, plan};
        use crate::dtcore::GroundTruth;
        let ctx = fixture_ctx();
        let t = twin(0);
        let p = plan(&ctx, "Segment the brown bear with a clear outline of its shaggy coat.").unwrap();
        let out = Executor::new(Some(&ctx), None).execute(&p, &t, "q").unwrap();
        let GroundTruth::MaskSequence(m) = out.output else { panic!() };
        assert!(m.values().all(|v| v.len() == 1));

        let p = plan(&ctx, "What is the brown bear with a clear outline of its shaggy coat doing?").unwrap();
        let out = Executor::new(Some(&ctx), None).execute(&p, &t, "q").unwrap();
        let GroundTruth::Text(text) = out.output else { panic!() };
        assert!(text.contains("brown bear"), "{text}");
    }
}
