//! Benchmark sample generation, shards and dataset statistics.
//!
//! For every candidate object a reasoning tree is cut into four level
//! subtrees; each subtree yields one implicit query with its reasoning
//! categories and the ground truth for the candidate's task. Ground truth for
//! segmentation and grounding comes from the root instance's annotations in
//! the full twin; summaries and answers are written by the model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dtcore::{
    downsample_twin, serialize_twin_with, validate_sample, BoxSequence, BoxXywh, DigitalTwin, DtError,
    GroundTruth, MaskRle, MaskSequence, Profile, ReasoningCategory, RvtSample, Severity, TaskType,
    ValidationMode, Violation,
};
use crate::llm::LlmContext;
use crate::modelio::{parse_structured, Message, ModelError, Structured};
use crate::text::{contains_ignore_case, whitespace_tokens};
use crate::treegen::{
    assign_task_type, build_reasoning_tree, extract_level_subtree, select_objects, CandidateObject,
    GenerationError, LevelSubtree, ReasoningTree,
};

pub const LEVELS: [u8; 4] = [1, 2, 3, 4];
pub const VQA_MAX_TOKENS: usize = 120;
pub const SUMMARY_MIN_TOKENS: usize = 40;
pub const SUMMARY_MAX_TOKENS: usize = 200;
const SYSTEM: &str = "treegen/system";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("ground-truth extraction failed: {0}")]
    Extraction(String),
    #[error("invalid samples: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("{path}:{line}: {message}")]
    Shard { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ModelError> for BenchError {
    fn from(e: ModelError) -> Self {
        BenchError::Generation(e.into())
    }
}

impl From<DtError> for BenchError {
    fn from(e: DtError) -> Self {
        BenchError::Generation(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: String,
    pub categories: BTreeSet<ReasoningCategory>,
    pub level: u8,
}

/// Subtree as shown to the model: edges get ids `e0, e1, …` for the checklist.
pub fn subtree_payload(subtree: &LevelSubtree) -> String {
    let edges: Vec<_> = subtree
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| {
            json!({
                "id": format!("e{i}"),
                "from": e.from,
                "to": e.to,
                "kind": e.kind,
                "relation": e.relation,
                "timestamps": e.timestamps,
            })
        })
        .collect();
    json!({
        "root": subtree.root_id,
        "level": subtree.level,
        "nodes": subtree.nodes,
        "edges": edges,
    })
    .to_string()
}

fn prompt_twin(twin: &DigitalTwin) -> Result<String, DtError> {
    serialize_twin_with(twin, Profile::Prompt, ValidationMode::Partial)
}

#[derive(Debug, Deserialize)]
struct QueryReply {
    query: String,
    #[serde(default)]
    categories: Vec<String>,
}

impl Structured for QueryReply {
    const SHAPE: &'static str = r#"{"query": string, "categories": ["semantic" | "spatial" | "temporal"]}"#;

    fn check(&self) -> Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("query is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct ChecklistReply {
    elements: Vec<ChecklistItem>,
    #[serde(default)]
    extraneous: bool,
}

#[derive(Debug, Deserialize)]
struct ChecklistItem {
    id: String,
    referenced: bool,
}

impl Structured for ChecklistReply {
    const SHAPE: &'static str = r#"{"elements": [{"id": string, "referenced": boolean}], "extraneous": boolean}"#;
}

/// Instance ids appearing in `query`, compared case-insensitively.
fn leaked_ids<'a>(query: &str, ids: &'a BTreeSet<String>) -> Vec<&'a str> {
    ids.iter()
        .filter(|id| contains_ignore_case(query, id))
        .map(String::as_str)
        .collect()
}

/// Categories the query is credited with: kinds of the edges the checklist
/// says it uses (all subtree kinds when it names none), intersected with the
/// model's own report, falling back to semantic.
fn credited_categories(
    subtree: &LevelSubtree,
    checklist: &ChecklistReply,
    reported: &[String],
) -> BTreeSet<ReasoningCategory> {
    let referenced: BTreeSet<&str> = checklist
        .elements
        .iter()
        .filter(|e| e.referenced)
        .map(|e| e.id.as_str())
        .collect();
    let mut used: BTreeSet<ReasoningCategory> = subtree
        .edges
        .iter()
        .enumerate()
        .filter(|(i, _)| referenced.contains(format!("e{i}").as_str()))
        .map(|(_, e)| e.kind)
        .collect();
    if used.is_empty() {
        used = subtree.kinds();
    }
    let reported: BTreeSet<ReasoningCategory> = reported
        .iter()
        .filter_map(|c| c.trim().to_lowercase().parse().ok())
        .collect();
    let out: BTreeSet<ReasoningCategory> = used.intersection(&reported).copied().collect();
    if out.is_empty() {
        BTreeSet::from([ReasoningCategory::Semantic])
    } else {
        out
    }
}

/// Asks for `key`, and on regeneration appends the rejected reply and the reason.
fn ask_with_feedback<T: Structured>(
    ctx: &LlmContext,
    key: &str,
    vars: &[(&str, &str)],
    rejected: Option<(&str, &str)>,
) -> Result<T, ModelError> {
    let mut req = ctx.request(Some(SYSTEM), key, vars);
    if let Some((previous, reason)) = rejected {
        req.messages.push(Message::assistant(previous));
        req.messages.push(Message::user(format!(
            "That answer was rejected: {reason}. Write a new one that fixes this."
        )));
    }
    parse_structured(&ctx.client, &req)
}

/// One implicit query for `subtree`. A rejected query is regenerated once;
/// a second rejection skips the level (`Ok(None)`) with a warning.
pub fn generate_query(
    ctx: &LlmContext,
    sampled: &DigitalTwin,
    candidate: &CandidateObject,
    task: TaskType,
    subtree: &LevelSubtree,
    warnings: &mut Vec<String>,
) -> Result<Option<QueryRecord>, GenerationError> {
    let twin_text = prompt_twin(sampled)?;
    let sub_text = subtree_payload(subtree);
    let level = subtree.level.to_string();
    let cand_text = json!({ "instance_id": candidate.instance_id, "rationale": candidate.rationale }).to_string();
    let ids = sampled.instance_ids();
    let mut rejected: Option<(String, String)> = None;
    for _ in 0..2 {
        let reply: QueryReply = ask_with_feedback(
            ctx,
            "benchgen/query",
            &[
                ("task", task.as_str()),
                ("level", &level),
                ("candidate", &cand_text),
                ("subtree", &sub_text),
                ("twin", &twin_text),
            ],
            rejected.as_ref().map(|(p, r)| (p.as_str(), r.as_str())),
        )?;
        let query = reply.query.trim().to_string();
        let raw = json!({ "query": query, "categories": reply.categories }).to_string();
        let leaked = leaked_ids(&query, &ids);
        if !leaked.is_empty() {
            rejected = Some((raw, format!("the query names instance ids {}", leaked.join(", "))));
            continue;
        }
        let checklist: ChecklistReply = ctx.ask(
            Some(SYSTEM),
            "benchgen/checklist",
            &[("query", &query), ("subtree", &sub_text)],
        )?;
        if checklist.extraneous {
            rejected = Some((raw, "the query mentions entities or relations outside the reasoning tree".into()));
            continue;
        }
        let categories = credited_categories(subtree, &checklist, &reply.categories);
        return Ok(Some(QueryRecord { query, categories, level: subtree.level }));
    }
    warnings.push(format!(
        "{} L{}: query rejected twice ({}); level skipped",
        candidate.instance_id,
        subtree.level,
        rejected.map(|r| r.1).unwrap_or_default()
    ));
    Ok(None)
}

/// Per-frame masks of `entity` over every frame of the full twin. Frames where
/// the instance is absent or its mask is empty get an empty entry.
pub fn extract_ground_truth_masks(twin: &DigitalTwin, entity: &str) -> Result<MaskSequence, BenchError> {
    if !twin.instance_ids().contains(entity) {
        return Err(BenchError::Extraction(format!(
            "root entity {entity:?} is not a tracked instance of video {}",
            twin.metadata.video_id
        )));
    }
    let mut out = MaskSequence::new();
    for f in &twin.frames {
        let masks = match f.instances.get(entity) {
            Some(inst) => {
                let rle = inst.mask_rle().ok_or_else(|| {
                    BenchError::Extraction(format!("mask of {entity} at frame {} is not resolved", f.timestamp))
                })?;
                if rle.is_empty() {
                    Vec::new()
                } else {
                    vec![rle.clone()]
                }
            }
            None => Vec::new(),
        };
        out.insert(f.timestamp, masks);
    }
    Ok(out)
}

pub fn mask_box(mask: &MaskRle) -> Option<BoxXywh> {
    mask.bounding_box()
        .map(|(x, y, w, h)| BoxXywh::new(x as f64, y as f64, w as f64, h as f64))
}

/// Tight boxes of every non-empty mask, frame by frame.
pub fn masks_to_boxes(masks: &MaskSequence) -> BoxSequence {
    masks
        .iter()
        .map(|(t, ms)| (*t, ms.iter().filter_map(mask_box).collect()))
        .collect()
}

#[derive(Debug, Deserialize)]
struct TextReply {
    text: String,
}

impl Structured for TextReply {
    const SHAPE: &'static str = r#"{"text": string}"#;
}

fn text_limits(task: TaskType) -> (usize, usize) {
    match task {
        TaskType::Summary => (SUMMARY_MIN_TOKENS, SUMMARY_MAX_TOKENS),
        _ => (1, VQA_MAX_TOKENS),
    }
}

/// Answer (vqa) or summary text for a query. Empty or out-of-range text is
/// regenerated once, then the level is skipped.
pub fn generate_text_ground_truth(
    ctx: &LlmContext,
    sampled: &DigitalTwin,
    query: &QueryRecord,
    subtree: &LevelSubtree,
    task: TaskType,
    warnings: &mut Vec<String>,
) -> Result<Option<String>, GenerationError> {
    if !task.is_text() {
        return Err(GenerationError::Invalid(format!("{task} has no text ground truth")));
    }
    let (lo, hi) = text_limits(task);
    let twin_text = prompt_twin(sampled)?;
    let sub_text = subtree_payload(subtree);
    let (lo_s, hi_s) = (lo.to_string(), hi.to_string());
    let mut rejected: Option<(String, String)> = None;
    for _ in 0..2 {
        let reply: TextReply = ask_with_feedback(
            ctx,
            "benchgen/text_answer",
            &[
                ("task", task.as_str()),
                ("query", &query.query),
                ("subtree", &sub_text),
                ("twin", &twin_text),
                ("max_tokens", &hi_s),
                ("min_tokens", &lo_s),
            ],
            rejected.as_ref().map(|(p, r)| (p.as_str(), r.as_str())),
        )?;
        let text = reply.text.trim().to_string();
        let n = whitespace_tokens(&text);
        if (lo..=hi).contains(&n) {
            return Ok(Some(text));
        }
        rejected = Some((
            json!({ "text": text }).to_string(),
            format!("the text has {n} words, it must have between {lo} and {hi}"),
        ));
    }
    warnings.push(format!(
        "L{} {task} ground truth rejected twice ({}); level skipped",
        query.level,
        rejected.map(|r| r.1).unwrap_or_default()
    ));
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_candidates: usize,
    pub downsample_d: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { n_candidates: crate::treegen::DEFAULT_CANDIDATES, downsample_d: 2 }
    }
}

/// Everything produced for one video.
#[derive(Debug, Clone, Default)]
pub struct VideoSamples {
    pub samples: Vec<RvtSample>,
    pub trees: Vec<(CandidateObject, TaskType, ReasoningTree)>,
    pub warnings: Vec<String>,
}

/// Whether an error only disqualifies one candidate rather than the video.
fn candidate_local(e: &GenerationError) -> bool {
    matches!(
        e,
        GenerationError::InvalidTree(_) | GenerationError::Model(ModelError::Generation { .. })
    )
}

/// Samples for one video: candidates, task types, trees, then one sample per level.
pub fn generate_video_samples(
    ctx: &LlmContext,
    twin: &DigitalTwin,
    config: &GenerationConfig,
) -> Result<VideoSamples, BenchError> {
    let video = twin.metadata.video_id.clone();
    let (sampled, ds_warnings) = downsample_twin(twin, config.downsample_d)?;
    let mut out = VideoSamples {
        warnings: ds_warnings.iter().map(|v| format!("{video}: {v}")).collect(),
        ..Default::default()
    };
    let (candidates, w) = select_objects(ctx, &sampled, config.n_candidates)?;
    out.warnings.extend(w.into_iter().map(|w| format!("{video}: {w}")));

    for cand in candidates {
        let (task, w) = assign_task_type(ctx, &sampled, &cand)?;
        out.warnings.extend(w.map(|w| format!("{video}: {w}")));
        let tree = match build_reasoning_tree(ctx, &sampled, &cand) {
            Ok((tree, w)) => {
                out.warnings.extend(w.into_iter().map(|w| format!("{video} {}: {w}", cand.instance_id)));
                tree
            }
            Err(e) if candidate_local(&e) => {
                out.warnings.push(format!("{video} {}: candidate skipped: {e}", cand.instance_id));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let root_entity = tree.root().entity.clone();
        let masks = if task.is_text() {
            None
        } else {
            match extract_ground_truth_masks(twin, &root_entity) {
                Ok(m) => Some(m),
                Err(e) => {
                    out.warnings.push(format!("{video} {}: candidate skipped: {e}", cand.instance_id));
                    continue;
                }
            }
        };
        for level in LEVELS {
            let subtree = extract_level_subtree(&tree, level);
            let mut warnings = Vec::new();
            let Some(query) = generate_query(ctx, &sampled, &cand, task, &subtree, &mut warnings)? else {
                out.warnings.extend(warnings.into_iter().map(|w| format!("{video}: {w}")));
                continue;
            };
            let ground_truth = match (task, &masks) {
                (TaskType::Segmentation, Some(m)) => GroundTruth::MaskSequence(m.clone()),
                (TaskType::Grounding, Some(m)) => GroundTruth::BoxSequence(masks_to_boxes(m)),
                _ => match generate_text_ground_truth(ctx, &sampled, &query, &subtree, task, &mut warnings)? {
                    Some(text) => GroundTruth::Text(text),
                    None => {
                        out.warnings.extend(warnings.into_iter().map(|w| format!("{video} {}: {w}", cand.instance_id)));
                        continue;
                    }
                },
            };
            out.warnings.extend(warnings.into_iter().map(|w| format!("{video}: {w}")));
            let sample = RvtSample {
                sample_id: format!("{video}-{}-L{level}", cand.instance_id),
                video_id: video.clone(),
                task,
                query: query.query,
                categories: query.categories,
                level,
                ground_truth,
                target_instance_id: root_entity.clone(),
                subtree_ref: serde_json::to_value(&subtree).expect("subtree serializes"),
            };
            let errors: Vec<Violation> = validate_sample(&sample, Some(twin.metadata.resolution))
                .into_iter()
                .filter(|v| v.severity == Severity::Error)
                .collect();
            if errors.is_empty() {
                out.samples.push(sample);
            } else {
                out.warnings.push(format!(
                    "{}: sample dropped: {}",
                    sample.sample_id,
                    errors.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
                ));
            }
        }
        out.trees.push((cand, task, tree));
    }
    Ok(out)
}

fn check_samples(samples: &[RvtSample]) -> Result<(), BenchError> {
    let errors: Vec<Violation> = samples
        .iter()
        .flat_map(|s| validate_sample(s, None))
        .filter(|v| v.severity == Severity::Error)
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(BenchError::Invalid(errors))
    }
}

/// Canonical JSONL text for a shard: one sample per line, keys sorted.
pub fn shard_text(samples: &[RvtSample]) -> Result<String, BenchError> {
    check_samples(samples)?;
    let mut out = String::new();
    for s in samples {
        let value = serde_json::to_value(s).map_err(DtError::from)?;
        out.push_str(&serde_json::to_string(&value).map_err(DtError::from)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes a shard after validating every sample; nothing is written on failure.
pub fn write_shard(samples: &[RvtSample], path: &Path) -> Result<(), BenchError> {
    let text = shard_text(samples)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn load_shard(path: &Path) -> Result<Vec<RvtSample>, BenchError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: RvtSample = serde_json::from_str(&line).map_err(|e| BenchError::Shard {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(sample);
    }
    check_samples(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub queries: usize,
    pub tokens: usize,
}

/// Token shares (percent, two decimals) by level, task and reasoning category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub totals: Totals,
    pub by_level: BTreeMap<String, f64>,
    pub by_task: BTreeMap<String, f64>,
    pub by_category: BTreeMap<String, f64>,
    pub per_video: BTreeMap<String, usize>,
}

/// Whitespace tokens of the query plus any text ground truth.
pub fn sample_tokens(sample: &RvtSample) -> usize {
    whitespace_tokens(&sample.query)
        + sample.ground_truth.as_text().map_or(0, whitespace_tokens)
}

fn shares(weights: BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let total: f64 = weights.values().sum();
    weights
        .into_iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(k, w)| (k, crate::dtcore::round2(100.0 * w / total)))
        .collect()
}

/// A sample's tokens count fully toward each of its categories; category
/// shares are then normalized over the category totals.
pub fn compute_dataset_stats(samples: &[RvtSample]) -> DatasetStats {
    let mut by_level = BTreeMap::new();
    let mut by_task = BTreeMap::new();
    let mut by_category = BTreeMap::new();
    let mut per_video = BTreeMap::new();
    let mut tokens = 0usize;
    for s in samples {
        let n = sample_tokens(s);
        tokens += n;
        *by_level.entry(format!("L{}", s.level)).or_insert(0.0) += n as f64;
        *by_task.entry(s.task.as_str().to_string()).or_insert(0.0) += n as f64;
        for c in &s.categories {
            *by_category.entry(c.as_str().to_string()).or_insert(0.0) += n as f64;
        }
        *per_video.entry(s.video_id.clone()).or_insert(0) += 1;
    }
    DatasetStats {
        totals: Totals { queries: samples.len(), tokens },
        by_level: shares(by_level),
        by_task: shares(by_task),
        by_category: shares(by_category),
        per_video,
    }
}

impl DatasetStats {
    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24}{:>12}", "queries", self.totals.queries);
        let _ = writeln!(out, "{:<24}{:>12}", "tokens", self.totals.tokens);
        for (title, group) in [("level", &self.by_level), ("task", &self.by_task), ("category", &self.by_category)] {
            let _ = writeln!(out, "\n{title:<24}{:>12}", "share %");
            for (k, v) in group {
                let _ = writeln!(out, "{k:<24}{v:>12.2}");
            }
        }
        let _ = writeln!(out, "\n{:<24}{:>12}", "video", "samples");
        for (k, v) in &self.per_video {
            let _ = writeln!(out, "{k:<24}{v:>12}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtcore::testing::twin_with_frames;
    use crate::dtcore::{decode_rle, encode_rle, Bitmap};
    use crate::llm::testing::scripted;
    use crate::treegen::{ReasoningEdge, ReasoningNode};
    use rand::{Rng, SeedableRng};

    fn node(id: &str, entity: &str, attrs: &[&str]) -> ReasoningNode {
        ReasoningNode {
            node_id: id.into(),
            entity: entity.into(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            is_root: id == "r",
        }
    }

    fn edge(from: &str, to: &str, kind: ReasoningCategory, rel: &str) -> ReasoningEdge {
        ReasoningEdge { from: from.into(), to: to.into(), kind, relation: rel.into(), timestamps: vec![] }
    }

    fn coat_subtree() -> LevelSubtree {
        LevelSubtree {
            nodes: vec![node("r", "obj_001", &[]), node("a", "coat", &["thick", "shaggy"])],
            edges: vec![edge("r", "a", ReasoningCategory::Semantic, "has_attribute")],
            root_id: "r".into(),
            depth: 1,
            level: 1,
        }
    }

    fn cand() -> CandidateObject {
        CandidateObject { instance_id: "obj_001".into(), rank: 1, rationale: "salient".into(), first_seen: 1 }
    }

    #[test]
    fn semantic_query_from_attribute_subtree() {
        let twin = twin_with_frames(2);
        let ctx = scripted(&[
            r#"{"query":"Segment the bear with a thick, shaggy coat","categories":["semantic"]}"#,
            r#"{"elements":[{"id":"r","referenced":true},{"id":"a","referenced":true},{"id":"e0","referenced":true}],"extraneous":false}"#,
        ]);
        let mut w = Vec::new();
        let q = generate_query(&ctx, &twin, &cand(), TaskType::Segmentation, &coat_subtree(), &mut w)
            .unwrap()
            .unwrap();
        assert_eq!(q.query, "Segment the bear with a thick, shaggy coat");
        assert_eq!(q.categories, BTreeSet::from([ReasoningCategory::Semantic]));
        assert_eq!(q.level, 1);
    }

    #[test]
    fn categories_follow_edge_kinds() {
        let sub = LevelSubtree {
            nodes: vec![node("r", "obj_001", &[]), node("b", "obj_002", &[])],
            edges: vec![edge("r", "b", ReasoningCategory::Spatial, "in_front_of")],
            root_id: "r".into(),
            depth: 1,
            level: 1,
        };
        let ctx = scripted(&[
            r#"{"query":"Find the animal in front of the car","categories":["spatial","temporal"]}"#,
            r#"{"elements":[{"id":"e0","referenced":true}],"extraneous":false}"#,
        ]);
        let q = generate_query(&ctx, &twin_with_frames(2), &cand(), TaskType::Grounding, &sub, &mut Vec::new())
            .unwrap()
            .unwrap();
        assert_eq!(q.categories, BTreeSet::from([ReasoningCategory::Spatial]));
    }

    #[test]
    fn leaked_id_triggers_regeneration_then_skip() {
        let twin = twin_with_frames(2);
        let ctx = scripted(&[
            r#"{"query":"Segment obj_001","categories":["semantic"]}"#,
            r#"{"query":"Segment the shaggy bear","categories":["semantic"]}"#,
            r#"{"elements":[],"extraneous":false}"#,
        ]);
        let q = generate_query(&ctx, &twin, &cand(), TaskType::Segmentation, &coat_subtree(), &mut Vec::new())
            .unwrap()
            .unwrap();
        assert_eq!(q.query, "Segment the shaggy bear");

        let ctx = scripted(&[
            r#"{"query":"Segment OBJ_001","categories":["semantic"]}"#,
            r#"{"query":"Segment obj_002 too","categories":["semantic"]}"#,
        ]);
        let mut w = Vec::new();
        let q = generate_query(&ctx, &twin, &cand(), TaskType::Segmentation, &coat_subtree(), &mut w).unwrap();
        assert!(q.is_none());
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn ground_truth_masks_copy_the_twin() {
        let twin = twin_with_frames(8);
        let m = extract_ground_truth_masks(&twin, "obj_001").unwrap();
        assert_eq!(m.len(), 8);
        for f in &twin.frames {
            assert_eq!(m[&f.timestamp], vec![f.instances["obj_001"].mask_rle().unwrap().clone()]);
        }
        let mut gone = twin.clone();
        for f in gone.frames.iter_mut().filter(|f| f.timestamp >= 6) {
            f.instances.remove("obj_001");
            f.relations.clear();
        }
        let m = extract_ground_truth_masks(&gone, "obj_001").unwrap();
        assert!(m[&6].is_empty() && m[&8].is_empty() && !m[&5].is_empty());
        assert!(matches!(extract_ground_truth_masks(&twin, "left arm"), Err(BenchError::Extraction(_))));
    }

    #[test]
    fn tight_boxes() {
        let bm = Bitmap::from_fn(10, 10, |y, x| (2..=5).contains(&x) && (3..=7).contains(&y));
        let seq = MaskSequence::from([(1, vec![encode_rle(&bm).unwrap()]), (2, vec![])]);
        let boxes = masks_to_boxes(&seq);
        assert_eq!(boxes[&1], vec![BoxXywh::new(2.0, 3.0, 4.0, 5.0)]);
        assert!(boxes[&2].is_empty());
        assert!(mask_box(&MaskRle::empty(4, 4)).is_none());
    }

    #[test]
    fn boxes_match_pixel_scan() {
        for seed in 0..500u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (h, w) = (rng.gen_range(1..24), rng.gen_range(1..24));
            let p = rng.gen_range(0.0..0.3);
            let bm = Bitmap::from_fn(h, w, |_, _| rng.gen_bool(p));
            let rle = encode_rle(&bm).unwrap();
            let got = mask_box(&rle);
            let pix: Vec<(usize, usize)> = decode_rle(&rle).unwrap().pixels().collect();
            if pix.is_empty() {
                assert!(got.is_none());
                continue;
            }
            let x0 = pix.iter().map(|p| p.1).min().unwrap();
            let x1 = pix.iter().map(|p| p.1).max().unwrap();
            let y0 = pix.iter().map(|p| p.0).min().unwrap();
            let y1 = pix.iter().map(|p| p.0).max().unwrap();
            let want = BoxXywh::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
            assert_eq!(got.unwrap(), want, "seed {seed}");
        }
    }

    #[test]
    fn text_ground_truth_bounds() {
        let twin = twin_with_frames(2);
        let q = QueryRecord { query: "What is the bear doing?".into(), categories: BTreeSet::new(), level: 1 };
        let ctx = scripted(&[r#"{"text":"It is standing still."}"#]);
        let t = generate_text_ground_truth(&ctx, &twin, &q, &coat_subtree(), TaskType::Vqa, &mut Vec::new())
            .unwrap();
        assert_eq!(t.as_deref(), Some("It is standing still."));

        let ctx = scripted(&[r#"{"text":""}"#, r#"{"text":"  "}"#]);
        let mut w = Vec::new();
        let t = generate_text_ground_truth(&ctx, &twin, &q, &coat_subtree(), TaskType::Vqa, &mut w).unwrap();
        assert!(t.is_none());
        assert_eq!(w.len(), 1);

        let short = r#"{"text":"Too short for a summary."}"#;
        let long = format!(r#"{{"text":"{}"}}"#, "word ".repeat(60).trim());
        let ctx = scripted(&[short, &long]);
        let t = generate_text_ground_truth(&ctx, &twin, &q, &coat_subtree(), TaskType::Summary, &mut Vec::new())
            .unwrap()
            .unwrap();
        assert_eq!(whitespace_tokens(&t), 60);
    }

    fn sample(level: u8, task: TaskType, query: &str, gt: GroundTruth, cats: &[ReasoningCategory]) -> RvtSample {
        RvtSample {
            sample_id: format!("v-obj_001-L{level}"),
            video_id: "v".into(),
            task,
            query: query.into(),
            categories: cats.iter().copied().collect(),
            level,
            ground_truth: gt,
            target_instance_id: "obj_001".into(),
            subtree_ref: json!({"root": "r"}),
        }
    }

    #[test]
    fn shard_round_trip_and_refusal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shards/rvt-test.jsonl");
        let samples = vec![
            sample(1, TaskType::Vqa, "What is it?", GroundTruth::Text("A bear.".into()), &[ReasoningCategory::Semantic]),
            sample(
                2,
                TaskType::Grounding,
                "Where is it?",
                GroundTruth::BoxSequence(BTreeMap::from([(1, vec![BoxXywh::new(1.0, 2.0, 3.0, 4.0)])])),
                &[ReasoningCategory::Spatial],
            ),
        ];
        write_shard(&samples, &path).unwrap();
        assert_eq!(load_shard(&path).unwrap(), samples);

        let bad = vec![sample(5, TaskType::Vqa, "q", GroundTruth::Text("a".into()), &[ReasoningCategory::Semantic])];
        let other = dir.path().join("bad.jsonl");
        assert!(matches!(write_shard(&bad, &other), Err(BenchError::Invalid(_))));
        assert!(!other.exists());
    }

    #[test]
    fn level_shares_follow_token_counts() {
        let text = GroundTruth::Text(String::new());
        let samples = vec![
            sample(1, TaskType::Summary, "one two three", text.clone(), &[ReasoningCategory::Semantic]),
            sample(4, TaskType::Summary, "one two three four five", text, &[ReasoningCategory::Semantic, ReasoningCategory::Spatial]),
        ];
        let s = compute_dataset_stats(&samples);
        assert_eq!(s.totals, Totals { queries: 2, tokens: 8 });
        assert_eq!(s.by_level, BTreeMap::from([("L1".into(), 37.5), ("L4".into(), 62.5)]));
        // semantic carries 8 tokens, spatial 5: shares over 13
        assert_eq!(s.by_category["semantic"], 61.54);
        assert_eq!(s.by_category["spatial"], 38.46);
        assert!(!s.by_category.contains_key("temporal"));
        assert!(s.to_table().contains("L4"));
    }
}
