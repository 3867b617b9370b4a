//! Digital-twin construction from a frame sequence.
//!
//! Key frames (every `t_s` frames, starting at frame 1) go through the full
//! adapter suite; the frames in between get tracker-propagated masks with
//! depth statistics, features and spatial relations recomputed per frame,
//! while captions are copied forward from the last key frame.

mod build;
mod depth;
mod features;
mod http_adapters;
pub mod mock;
mod spatial;
mod tracking;
mod vlm;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::dtcore::{Bitmap, DtError, VisualFeatures};

pub use build::{
    build_digital_twin, build_digital_twin_with, describe_with_fallback, BuildOutcome, schedule_keyframes,
    FrameSource, UNIDENTIFIED_OBJECT,
};
pub use depth::{compute_depth_stats, DepthMap};
pub use features::{extract_visual_features, ClassicalFeatures};
pub use http_adapters::{HttpDepthEstimator, HttpSegmenter};
pub use spatial::{derive_spatial_description, SpatialInput};
pub use tracking::{segment_keyframe, track_to_frame, TrackMemory, TrackedMask};
pub use vlm::VlmCaptioner;

#[derive(Debug, thiserror::Error)]
pub enum PerceptionError {
    #[error("{stage} failed at frame {frame}: {message}")]
    Adapter {
        stage: Stage,
        frame: u32,
        message: String,
    },
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Twin(#[from] DtError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Segmentation,
    Tracking,
    Depth,
    Captioning,
    Features,
    Ingest,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Segmentation => "segmentation",
            Stage::Tracking => "tracking",
            Stage::Depth => "depth estimation",
            Stage::Captioning => "captioning",
            Stage::Features => "feature extraction",
            Stage::Ingest => "frame ingestion",
        })
    }
}

/// Error type adapters return; the pipeline attaches stage and frame.
pub type AdapterResult<T> = Result<T, String>;

/// A mask proposal with the segmenter's confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub mask: Bitmap,
    pub confidence: f64,
}

/// Promptable instance segmenter with memory-based tracking.
pub trait Segmenter: Send + Sync {
    fn model_id(&self) -> String;
    /// Full instance segmentation of a key frame.
    fn segment(&self, t: u32, frame: &RgbImage) -> AdapterResult<Vec<Detection>>;
    /// Masks for `frame` of every instance in `memory`. Instances the
    /// tracker cannot place may be omitted; the pipeline records them empty.
    fn propagate(&self, t: u32, frame: &RgbImage, memory: &TrackMemory) -> AdapterResult<BTreeMap<String, Bitmap>>;
}

pub trait DepthEstimator: Send + Sync {
    fn model_id(&self) -> String;
    /// Raw depth for the frame; the pipeline normalizes it to `[0, 255]`.
    fn estimate(&self, t: u32, frame: &RgbImage) -> AdapterResult<DepthMap>;
}

pub trait Captioner: Send + Sync {
    fn model_id(&self) -> String;
    fn describe_instance(&self, t: u32, frame: &RgbImage, mask: &Bitmap) -> AdapterResult<String>;
    fn describe_scene(&self, t: u32, frame: &RgbImage) -> AdapterResult<String>;
    fn describe_video(&self, keyframes: &[(u32, &RgbImage)]) -> AdapterResult<String>;
}

pub trait FeatureExtractor: Send + Sync {
    fn model_id(&self) -> String;
    fn extract(&self, frame: &RgbImage, mask: &Bitmap, previous: Option<&RgbImage>) -> AdapterResult<VisualFeatures>;
}

/// Perception capabilities a twin can be built with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Segmentation,
    Depth,
    Captioning,
    Features,
}

impl Capability {
    pub const ALL: [Capability; 4] = [
        Capability::Segmentation,
        Capability::Depth,
        Capability::Captioning,
        Capability::Features,
    ];

    pub fn full() -> BTreeSet<Capability> {
        Self::ALL.into_iter().collect()
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Segmentation => "segmentation",
            Capability::Depth => "depth",
            Capability::Captioning => "captioning",
            Capability::Features => "features",
        })
    }
}

/// The perception model suite. Only the segmenter is mandatory.
#[derive(Clone)]
pub struct AdapterSet {
    pub segmenter: Arc<dyn Segmenter>,
    pub depth_estimator: Option<Arc<dyn DepthEstimator>>,
    pub captioner: Option<Arc<dyn Captioner>>,
    pub feature_extractor: Option<Arc<dyn FeatureExtractor>>,
}

impl AdapterSet {
    pub fn capabilities(&self) -> BTreeSet<Capability> {
        let mut caps = BTreeSet::from([Capability::Segmentation]);
        if self.depth_estimator.is_some() {
            caps.insert(Capability::Depth);
        }
        if self.captioner.is_some() {
            caps.insert(Capability::Captioning);
        }
        if self.feature_extractor.is_some() {
            caps.insert(Capability::Features);
        }
        caps
    }

    /// A copy keeping only the adapters for `caps`.
    pub fn restricted(&self, caps: &BTreeSet<Capability>) -> AdapterSet {
        AdapterSet {
            segmenter: self.segmenter.clone(),
            depth_estimator: self.depth_estimator.clone().filter(|_| caps.contains(&Capability::Depth)),
            captioner: self.captioner.clone().filter(|_| caps.contains(&Capability::Captioning)),
            feature_extractor: self
                .feature_extractor
                .clone()
                .filter(|_| caps.contains(&Capability::Features)),
        }
    }

    /// `capability -> model id` for provenance records.
    pub fn model_ids(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        out.insert("segmentation".to_string(), self.segmenter.model_id());
        if let Some(d) = &self.depth_estimator {
            out.insert("depth".to_string(), d.model_id());
        }
        if let Some(c) = &self.captioner {
            out.insert("captioning".to_string(), c.model_id());
        }
        if let Some(f) = &self.feature_extractor {
            out.insert("features".to_string(), f.model_id());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthPolarity {
    LargerIsCloser,
    SmallerIsCloser,
}

/// Key-frame spacing `t_s`: fixed, or derived from the video length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyframeInterval {
    Fixed(u32),
    Auto,
}

impl KeyframeInterval {
    /// `Auto` resolves to `clamp(floor(T / 32), 1, 30)`.
    pub fn resolve(self, duration: u32) -> u32 {
        match self {
            KeyframeInterval::Fixed(n) => n.max(1),
            KeyframeInterval::Auto => (duration / 32).clamp(1, 30),
        }
    }
}

impl Serialize for KeyframeInterval {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            KeyframeInterval::Fixed(n) => s.serialize_u32(*n),
            KeyframeInterval::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for KeyframeInterval {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("keyframe interval must be positive")),
            Raw::N(n) => Ok(KeyframeInterval::Fixed(n)),
            Raw::S(s) if s == "auto" => Ok(KeyframeInterval::Auto),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "keyframe interval must be a positive integer or \"auto\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub keyframe_interval: KeyframeInterval,
    /// Detections below this confidence are discarded.
    pub confidence_floor: f64,
    /// Mean-depth difference (normalized units) up to which two instances are at the same distance.
    pub same_distance_threshold: f64,
    pub depth_polarity: DepthPolarity,
    /// Frame interval used when downsampling twins for prompts.
    pub downsample_d: u32,
    /// Minimum IoU for a key-frame detection to keep an existing track id.
    pub match_iou: f64,
    /// Centroid distance, as a fraction of the image diagonal, under which same-distance objects are next to each other.
    pub next_to_fraction: f64,
    /// Block-matching search radius in pixels for motion vectors.
    pub flow_search_radius: u32,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            keyframe_interval: KeyframeInterval::Auto,
            confidence_floor: 0.5,
            same_distance_threshold: 10.0,
            depth_polarity: DepthPolarity::LargerIsCloser,
            downsample_d: 2,
            match_iou: 0.5,
            next_to_fraction: 0.15,
            flow_search_radius: 8,
        }
    }
}

impl PerceptionConfig {
    pub fn check(&self) -> Result<(), PerceptionError> {
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(PerceptionError::Config("confidence_floor must be in [0, 1]".into()));
        }
        if !(self.same_distance_threshold >= 0.0) || !(self.next_to_fraction >= 0.0) {
            return Err(PerceptionError::Config("thresholds must be non-negative".into()));
        }
        if self.downsample_d < 1 {
            return Err(PerceptionError::Config("downsample_d must be at least 1".into()));
        }
        if let KeyframeInterval::Fixed(0) = self.keyframe_interval {
            return Err(PerceptionError::Config("keyframe interval must be positive".into()));
        }
        Ok(())
    }
}
