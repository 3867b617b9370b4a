use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::mask::MaskRle;
use super::twin::Violation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Segmentation,
    Grounding,
    Summary,
    Vqa,
}

impl TaskType {
    pub const ALL: [TaskType; 4] = [
        TaskType::Segmentation,
        TaskType::Grounding,
        TaskType::Summary,
        TaskType::Vqa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Segmentation => "segmentation",
            TaskType::Grounding => "grounding",
            TaskType::Summary => "summary",
            TaskType::Vqa => "vqa",
        }
    }

    pub fn is_text(self) -> bool {
        matches!(self, TaskType::Summary | TaskType::Vqa)
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "segmentation" => Ok(TaskType::Segmentation),
            "grounding" => Ok(TaskType::Grounding),
            "summary" => Ok(TaskType::Summary),
            "vqa" => Ok(TaskType::Vqa),
            other => Err(format!(
                "unknown task type {other:?}; expected segmentation, grounding, summary or vqa"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningCategory {
    Semantic,
    Spatial,
    Temporal,
}

impl ReasoningCategory {
    pub const ALL: [ReasoningCategory; 3] = [
        ReasoningCategory::Semantic,
        ReasoningCategory::Spatial,
        ReasoningCategory::Temporal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningCategory::Semantic => "semantic",
            ReasoningCategory::Spatial => "spatial",
            ReasoningCategory::Temporal => "temporal",
        }
    }
}

impl fmt::Display for ReasoningCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReasoningCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "semantic" => Ok(ReasoningCategory::Semantic),
            "spatial" => Ok(ReasoningCategory::Spatial),
            "temporal" => Ok(ReasoningCategory::Temporal),
            other => Err(format!("unknown reasoning category {other:?}")),
        }
    }
}

/// Axis-aligned box `(x, y, w, h)` in pixels, with an optional detector score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxXywh {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl BoxXywh {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h, score: None }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection(&self, other: &BoxXywh) -> f64 {
        let iw = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let ih = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn iou(&self, other: &BoxXywh) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Problems with this box inside a `[height, width]` frame.
    pub fn check(&self, resolution: Option<[u32; 2]>) -> Option<String> {
        if !(self.x >= 0.0 && self.y >= 0.0) {
            return Some(format!("box origin ({}, {}) is negative", self.x, self.y));
        }
        if !(self.w > 0.0 && self.h > 0.0) {
            return Some(format!("box size {}x{} is not positive", self.w, self.h));
        }
        if let Some([h, w]) = resolution {
            if self.x + self.w > w as f64 || self.y + self.h > h as f64 {
                return Some(format!("box {:?} extends outside a {}x{} frame", self, h, w));
            }
        }
        None
    }
}

pub type MaskSequence = BTreeMap<u32, Vec<MaskRle>>;
pub type BoxSequence = BTreeMap<u32, Vec<BoxXywh>>;

/// Expected (or predicted) output for one sample; the variant follows the task type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum GroundTruth {
    MaskSequence(MaskSequence),
    BoxSequence(BoxSequence),
    Text(String),
}

impl GroundTruth {
    pub fn variant_name(&self) -> &'static str {
        match self {
            GroundTruth::MaskSequence(_) => "mask_sequence",
            GroundTruth::BoxSequence(_) => "box_sequence",
            GroundTruth::Text(_) => "text",
        }
    }

    pub fn matches_task(&self, task: TaskType) -> bool {
        matches!(
            (self, task),
            (GroundTruth::MaskSequence(_), TaskType::Segmentation)
                | (GroundTruth::BoxSequence(_), TaskType::Grounding)
                | (GroundTruth::Text(_), TaskType::Summary | TaskType::Vqa)
        )
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            GroundTruth::Text(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvtSample {
    pub sample_id: String,
    pub video_id: String,
    pub task: TaskType,
    pub query: String,
    pub categories: BTreeSet<ReasoningCategory>,
    pub level: u8,
    pub ground_truth: GroundTruth,
    pub target_instance_id: String,
    /// Serialized level subtree the query was generated from.
    pub subtree_ref: serde_json::Value,
}

/// Checks the sample invariants; `resolution` enables box and mask bound checks.
pub fn validate_sample(sample: &RvtSample, resolution: Option<[u32; 2]>) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = |field: &str| format!("{}.{field}", sample.sample_id);
    if sample.sample_id.trim().is_empty() {
        out.push(Violation::error("sample_id", "sample_id must be non-empty"));
    }
    if !(1..=4).contains(&sample.level) {
        out.push(Violation::error(p("level"), format!("level {} outside 1..=4", sample.level)));
    }
    if sample.query.trim().is_empty() {
        out.push(Violation::error(p("query"), "query must be non-empty"));
    }
    if sample.categories.is_empty() {
        out.push(Violation::error(p("categories"), "category set must be non-empty"));
    }
    if !sample.ground_truth.matches_task(sample.task) {
        out.push(Violation::error(
            p("ground_truth"),
            format!(
                "{} ground truth does not match task {}",
                sample.ground_truth.variant_name(),
                sample.task
            ),
        ));
    }
    match &sample.ground_truth {
        GroundTruth::MaskSequence(seq) => {
            for (t, masks) in seq {
                for m in masks {
                    if let Err(e) = m.check() {
                        out.push(Violation::error(p(&format!("ground_truth[{t}]")), e.to_string()));
                    }
                    if resolution.is_some_and(|r| r != m.size) {
                        out.push(Violation::error(
                            p(&format!("ground_truth[{t}]")),
                            "mask size differs from video resolution",
                        ));
                    }
                }
            }
        }
        GroundTruth::BoxSequence(seq) => {
            for (t, boxes) in seq {
                for b in boxes {
                    if let Some(e) = b.check(resolution) {
                        out.push(Violation::error(p(&format!("ground_truth[{t}]")), e));
                    }
                }
            }
        }
        GroundTruth::Text(text) => {
            if text.trim().is_empty() {
                out.push(Violation::error(p("ground_truth"), "text ground truth is empty"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(task: TaskType, gt: GroundTruth) -> RvtSample {
        RvtSample {
            sample_id: "v-obj_001-L1".into(),
            video_id: "v".into(),
            task,
            query: "Segment the bear with a thick, shaggy coat".into(),
            categories: [ReasoningCategory::Semantic].into(),
            level: 1,
            ground_truth: gt,
            target_instance_id: "obj_001".into(),
            subtree_ref: serde_json::Value::Null,
        }
    }

    #[test]
    fn enums_serialize_lowercase() {
        assert_eq!(serde_json::to_string(&TaskType::Vqa).unwrap(), "\"vqa\"");
        assert_eq!(
            serde_json::to_string(&ReasoningCategory::Temporal).unwrap(),
            "\"temporal\""
        );
        assert_eq!("Grounding".parse::<TaskType>().unwrap(), TaskType::Grounding);
        assert!("detection".parse::<TaskType>().is_err());
    }

    #[test]
    fn variant_must_match_task() {
        let s = sample(TaskType::Segmentation, GroundTruth::Text("a bear".into()));
        let v = validate_sample(&s, None);
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("does not match"));
    }

    #[test]
    fn level_five_is_rejected() {
        let mut s = sample(TaskType::Summary, GroundTruth::Text("a bear".into()));
        s.level = 5;
        assert_eq!(validate_sample(&s, None).len(), 1);
    }

    #[test]
    fn box_bounds_are_checked() {
        let seq: BoxSequence = [(1, vec![BoxXywh::new(6.0, 0.0, 4.0, 2.0)])].into();
        let s = sample(TaskType::Grounding, GroundTruth::BoxSequence(seq));
        assert!(validate_sample(&s, None).is_empty());
        assert_eq!(validate_sample(&s, Some([8, 8])).len(), 1);
        let zero: BoxSequence = [(1, vec![BoxXywh::new(0.0, 0.0, 0.0, 2.0)])].into();
        let s = sample(TaskType::Grounding, GroundTruth::BoxSequence(zero));
        assert_eq!(validate_sample(&s, None).len(), 1);
    }

    #[test]
    fn box_iou() {
        let a = BoxXywh::new(0.0, 0.0, 2.0, 2.0);
        let b = BoxXywh::new(1.0, 0.0, 2.0, 2.0);
        assert!((a.iou(&b) - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(a.iou(&BoxXywh::new(5.0, 5.0, 1.0, 1.0)), 0.0);
    }
}
