use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::mask::MaskRle;

/// Frame rate as a rational number; informational only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Default for Fps {
    fn default() -> Self {
        Self { num: 30, den: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    #[serde(default)]
    pub video_id: String,
    /// Global description of the whole video.
    pub description: String,
    /// Number of frames `T`.
    pub duration: u32,
    /// `[height, width]` in pixels.
    pub resolution: [u32; 2],
    #[serde(default)]
    pub fps: Fps,
    #[serde(default)]
    pub source: String,
}

impl VideoMeta {
    pub fn height(&self) -> u32 {
        self.resolution[0]
    }

    pub fn width(&self) -> u32 {
        self.resolution[1]
    }
}

/// Population mean and standard deviation of normalized depth under a mask.
///
/// Serialized as the two-element array `[mean, std]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct DepthStats {
    pub mean: f64,
    pub std: f64,
}

impl From<[f64; 2]> for DepthStats {
    fn from(v: [f64; 2]) -> Self {
        Self { mean: v[0], std: v[1] }
    }
}

impl From<DepthStats> for [f64; 2] {
    fn from(d: DepthStats) -> Self {
        [d.mean, d.std]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualFeatures {
    /// Per channel (R, G, B), 8 bins of width 32, each channel normalized to sum 1.
    pub color_histogram: [[f64; 8]; 3],
    /// Mean optical flow `(dx, dy)` in pixels per frame.
    pub motion: [f64; 2],
    /// Mean squared gradient magnitude of the grayscale image under the mask.
    pub texture: f64,
}

/// A mask stored inline, or a path (relative to the output root) to an external `.rle` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskRef {
    Inline(MaskRle),
    External { path: String },
}

impl MaskRef {
    pub fn inline(&self) -> Option<&MaskRle> {
        match self {
            MaskRef::Inline(m) => Some(m),
            MaskRef::External { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub mask: MaskRef,
    pub confidence: f64,
    #[serde(default)]
    pub depth_stats: Option<DepthStats>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub visual_features: Option<VisualFeatures>,
    /// `[x, y]` in pixels; absent for empty masks.
    #[serde(default)]
    pub centroid: Option<[f64; 2]>,
    /// True when the mask came from the tracker and the description was copied from a key frame.
    #[serde(default)]
    pub propagated: bool,
}

impl InstanceRecord {
    pub fn mask_rle(&self) -> Option<&MaskRle> {
        self.mask.inline()
    }

    pub fn is_visible(&self) -> bool {
        match &self.mask {
            MaskRef::Inline(m) => !m.is_empty(),
            MaskRef::External { .. } => self.centroid.is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthRelation {
    SameDistance,
    InFrontOf,
    Behind,
}

impl DepthRelation {
    pub fn inverse(self) -> Self {
        match self {
            DepthRelation::SameDistance => DepthRelation::SameDistance,
            DepthRelation::InFrontOf => DepthRelation::Behind,
            DepthRelation::Behind => DepthRelation::InFrontOf,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DepthRelation::SameDistance => "same_distance",
            DepthRelation::InFrontOf => "in_front_of",
            DepthRelation::Behind => "behind",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanarRelation {
    LeftOf,
    RightOf,
    Above,
    Below,
    NextTo,
}

impl PlanarRelation {
    pub fn inverse(self) -> Self {
        match self {
            PlanarRelation::LeftOf => PlanarRelation::RightOf,
            PlanarRelation::RightOf => PlanarRelation::LeftOf,
            PlanarRelation::Above => PlanarRelation::Below,
            PlanarRelation::Below => PlanarRelation::Above,
            PlanarRelation::NextTo => PlanarRelation::NextTo,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PlanarRelation::LeftOf => "left_of",
            PlanarRelation::RightOf => "right_of",
            PlanarRelation::Above => "above",
            PlanarRelation::Below => "below",
            PlanarRelation::NextTo => "next_to",
        }
    }
}

/// Pairwise relation of `subject` relative to `object` in one frame.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpatialRelation {
    pub subject: String,
    pub object: String,
    pub depth: DepthRelation,
    pub planar: PlanarRelation,
}

impl SpatialRelation {
    pub fn inverse(&self) -> Self {
        Self {
            subject: self.object.clone(),
            object: self.subject.clone(),
            depth: self.depth.inverse(),
            planar: self.planar.inverse(),
        }
    }

    /// The relation oriented as `subject` relative to `object`, if this pair matches either way.
    pub fn oriented(&self, subject: &str, object: &str) -> Option<SpatialRelation> {
        if self.subject == subject && self.object == object {
            Some(self.clone())
        } else if self.subject == object && self.object == subject {
            Some(self.inverse())
        } else {
            None
        }
    }

    /// Relation vocabulary words that hold for this oriented pair.
    pub fn words(&self) -> [&'static str; 2] {
        [self.depth.as_str(), self.planar.as_str()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// 1-indexed frame number.
    pub timestamp: u32,
    #[serde(default)]
    pub scene_description: Option<String>,
    #[serde(default)]
    pub spatial_description: Option<String>,
    #[serde(default)]
    pub relations: Vec<SpatialRelation>,
    #[serde(default)]
    pub instances: BTreeMap<String, InstanceRecord>,
    /// True for frames whose masks were propagated by the tracker rather than segmented.
    #[serde(default)]
    pub propagated: bool,
}

impl FrameRecord {
    pub fn relation(&self, subject: &str, object: &str) -> Option<SpatialRelation> {
        self.relations.iter().find_map(|r| r.oriented(subject, object))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitalTwin {
    pub metadata: VideoMeta,
    pub frames: Vec<FrameRecord>,
    #[serde(default)]
    pub keyframe_indices: BTreeSet<u32>,
}

impl DigitalTwin {
    pub fn frame(&self, timestamp: u32) -> Option<&FrameRecord> {
        self.frames
            .binary_search_by_key(&timestamp, |f| f.timestamp)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn instance_ids(&self) -> BTreeSet<String> {
        self.frames
            .iter()
            .flat_map(|f| f.instances.keys().cloned())
            .collect()
    }

    /// Timestamps at which the instance has a non-empty mask.
    pub fn visible_frames(&self, instance_id: &str) -> Vec<u32> {
        self.frames
            .iter()
            .filter(|f| f.instances.get(instance_id).is_some_and(|i| i.is_visible()))
            .map(|f| f.timestamp)
            .collect()
    }

    pub fn first_seen(&self, instance_id: &str) -> Option<u32> {
        self.frames
            .iter()
            .find(|f| f.instances.contains_key(instance_id))
            .map(|f| f.timestamp)
    }

    /// Distinct descriptions recorded for an instance, in frame order.
    pub fn descriptions(&self, instance_id: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for f in &self.frames {
            if let Some(d) = f
                .instances
                .get(instance_id)
                .and_then(|i| i.description.as_deref())
            {
                if !out.contains(&d) {
                    out.push(d);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

/// One broken rule, located by a dotted path into the twin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub rule: String,
    pub severity: Severity,
}

impl Violation {
    pub fn error(path: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            rule: rule.into(),
            severity: Severity::Error,
        }
    }

    pub fn warning(path: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            rule: rule.into(),
            severity: Severity::Warning,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}
