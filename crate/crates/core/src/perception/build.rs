use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{
    compute_depth_stats, derive_spatial_description, segment_keyframe, track_to_frame, AdapterResult,
    AdapterSet, Capability, PerceptionConfig, PerceptionError, SpatialInput, Stage, TrackMemory,
};
use crate::dtcore::{
    encode_rle, validate_twin_with, DigitalTwin, DtError, Fps, FrameRecord, InstanceRecord, MaskRef,
    Severity, ValidationMode, VideoMeta,
};

/// Placeholder for an instance whose caption stays empty after one retry.
pub const UNIDENTIFIED_OBJECT: &str = "unidentified object";
const NO_DESCRIPTION: &str = "no description available";

/// Random access to the frames of one video, 1-indexed.
pub trait FrameSource: Sync {
    fn len(&self) -> u32;
    fn frame(&self, t: u32) -> Result<RgbImage, PerceptionError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fps(&self) -> Fps {
        Fps::default()
    }

    /// Where the frames came from, recorded in the twin metadata.
    fn source(&self) -> String {
        String::new()
    }
}

impl FrameSource for [RgbImage] {
    fn len(&self) -> u32 {
        <[RgbImage]>::len(self) as u32
    }

    fn frame(&self, t: u32) -> Result<RgbImage, PerceptionError> {
        t.checked_sub(1)
            .and_then(|i| self.get(i as usize))
            .cloned()
            .ok_or_else(|| PerceptionError::Missing(format!("frame {t}")))
    }
}

impl FrameSource for Vec<RgbImage> {
    fn len(&self) -> u32 {
        self.as_slice().len() as u32
    }

    fn frame(&self, t: u32) -> Result<RgbImage, PerceptionError> {
        self.as_slice().frame(t)
    }
}

/// `{1, 1 + t_s, 1 + 2 t_s, …} ∩ [1, T]`.
pub fn schedule_keyframes(duration: u32, interval: u32) -> Vec<u32> {
    let step = interval.max(1) as usize;
    (1..=duration).step_by(step).collect()
}

/// Calls `call`, retrying once on an empty reply. A second empty reply
/// yields `placeholder` together with a warning.
pub fn describe_with_fallback(
    mut call: impl FnMut() -> AdapterResult<String>,
    placeholder: &str,
) -> AdapterResult<(String, Option<String>)> {
    for _ in 0..2 {
        let text = call()?;
        if !text.trim().is_empty() {
            return Ok((text.trim().to_string(), None));
        }
    }
    Ok((
        placeholder.to_string(),
        Some(format!("empty caption replaced by \"{placeholder}\"")),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOutcome {
    pub twin: DigitalTwin,
    pub warnings: Vec<String>,
}

/// Partial build state persisted after every frame.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    video_id: String,
    interval: u32,
    capabilities: BTreeSet<Capability>,
    frames: Vec<FrameRecord>,
    memory: TrackMemory,
    labels: BTreeMap<String, String>,
    scene: Option<String>,
    warnings: Vec<String>,
}

fn load_checkpoint(path: &Path, video_id: &str, interval: u32, caps: &BTreeSet<Capability>) -> Option<Checkpoint> {
    let text = std::fs::read_to_string(path).ok()?;
    let cp: Checkpoint = serde_json::from_str(&text).ok()?;
    (cp.video_id == video_id && cp.interval == interval && &cp.capabilities == caps).then_some(cp)
}

fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), PerceptionError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(cp).map_err(DtError::from)?)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn build_digital_twin(
    video_id: &str,
    source: &dyn FrameSource,
    config: &PerceptionConfig,
    adapters: &AdapterSet,
) -> Result<BuildOutcome, PerceptionError> {
    build_digital_twin_with(video_id, source, config, adapters, None)
}

/// Builds a twin, persisting progress to `checkpoint` after every frame.
///
/// An existing checkpoint for the same video, key-frame interval and
/// capability set is resumed from. The file is removed once the build succeeds.
pub fn build_digital_twin_with(
    video_id: &str,
    source: &dyn FrameSource,
    config: &PerceptionConfig,
    adapters: &AdapterSet,
    checkpoint: Option<&Path>,
) -> Result<BuildOutcome, PerceptionError> {
    config.check()?;
    let duration = source.len();
    if duration == 0 {
        return Err(PerceptionError::Missing(format!("video {video_id} has no frames")));
    }
    let interval = config.keyframe_interval.resolve(duration);
    let keyframes = schedule_keyframes(duration, interval);
    let key_set: BTreeSet<u32> = keyframes.iter().copied().collect();
    let caps = adapters.capabilities();

    let first = source.frame(1)?;
    let (height, width) = (first.height(), first.width());

    let mut state = checkpoint
        .and_then(|p| load_checkpoint(p, video_id, interval, &caps))
        .unwrap_or_else(|| Checkpoint {
            video_id: video_id.to_string(),
            interval,
            capabilities: caps.clone(),
            frames: Vec::new(),
            memory: TrackMemory::default(),
            labels: BTreeMap::new(),
            scene: None,
            warnings: Vec::new(),
        });
    let start = state.frames.len() as u32 + 1;
    let mut previous = if start > 1 { Some(source.frame(start - 1)?) } else { None };

    for t in start..=duration {
        let image = if t == 1 { first.clone() } else { source.frame(t)? };
        if image.dimensions() != (width, height) {
            return Err(PerceptionError::Adapter {
                stage: Stage::Ingest,
                frame: t,
                message: format!("frame is {:?}, video is {width}x{height}", image.dimensions()),
            });
        }
        let frame = process_frame(t, key_set.contains(&t), &image, previous.as_ref(), config, adapters, &mut state)?;
        state.frames.push(frame);
        if let Some(p) = checkpoint {
            save_checkpoint(p, &state)?;
        }
        previous = Some(image);
    }

    let description = match &adapters.captioner {
        Some(captioner) => {
            let images = keyframes
                .iter()
                .map(|&k| source.frame(k).map(|img| (k, img)))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<(u32, &RgbImage)> = images.iter().map(|(k, img)| (*k, img)).collect();
            let (text, warning) = describe_with_fallback(|| captioner.describe_video(&refs), NO_DESCRIPTION)
                .map_err(|message| PerceptionError::Adapter { stage: Stage::Captioning, frame: 1, message })?;
            if let Some(w) = warning {
                state.warnings.push(format!("video description: {w}"));
            }
            text
        }
        None => String::new(),
    };

    let twin = DigitalTwin {
        metadata: VideoMeta {
            video_id: video_id.to_string(),
            description,
            duration,
            resolution: [height, width],
            fps: source.fps(),
            source: source.source(),
        },
        frames: state.frames,
        keyframe_indices: key_set,
    };
    let mode = if caps == Capability::full() { ValidationMode::Full } else { ValidationMode::Partial };
    let errors: Vec<_> = validate_twin_with(&twin, mode)
        .into_iter()
        .filter(|v| v.severity == Severity::Error)
        .collect();
    if !errors.is_empty() {
        return Err(DtError::Invalid(errors).into());
    }
    if let Some(p) = checkpoint {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    Ok(BuildOutcome { twin, warnings: state.warnings })
}

fn process_frame(
    t: u32,
    is_key: bool,
    image: &RgbImage,
    previous: Option<&RgbImage>,
    config: &PerceptionConfig,
    adapters: &AdapterSet,
    state: &mut Checkpoint,
) -> Result<FrameRecord, PerceptionError> {
    let seg = adapters.segmenter.as_ref();
    let tracked = if is_key {
        segment_keyframe(seg, t, image, &mut state.memory, config)?
    } else {
        track_to_frame(seg, t, image, &mut state.memory)?
    };

    let depth = match &adapters.depth_estimator {
        Some(d) => {
            let map = d
                .estimate(t, image)
                .map_err(|message| PerceptionError::Adapter { stage: Stage::Depth, frame: t, message })?;
            if (map.height, map.width) != (image.height() as usize, image.width() as usize) {
                return Err(PerceptionError::Adapter {
                    stage: Stage::Depth,
                    frame: t,
                    message: format!("depth map is {}x{}", map.height, map.width),
                });
            }
            Some(map.normalized())
        }
        None => None,
    };

    let caption_err = |message| PerceptionError::Adapter { stage: Stage::Captioning, frame: t, message };
    if is_key {
        if let Some(captioner) = &adapters.captioner {
            let (scene, warning) =
                describe_with_fallback(|| captioner.describe_scene(t, image), NO_DESCRIPTION).map_err(caption_err)?;
            if let Some(w) = warning {
                state.warnings.push(format!("frame {t} scene: {w}"));
            }
            state.scene = Some(scene);
            for tm in tracked.iter().filter(|tm| !tm.mask.is_empty()) {
                let (label, warning) = describe_with_fallback(
                    || captioner.describe_instance(t, image, &tm.mask),
                    UNIDENTIFIED_OBJECT,
                )
                .map_err(caption_err)?;
                if let Some(w) = warning {
                    state.warnings.push(format!("frame {t} instance {}: {w}", tm.instance_id));
                }
                state.labels.insert(tm.instance_id.clone(), label);
            }
        }
    }

    let mut instances = BTreeMap::new();
    let mut spatial_inputs = Vec::new();
    for tm in &tracked {
        let visible = !tm.mask.is_empty();
        let centroid = tm.mask.centroid().map(|(x, y)| [x, y]);
        let depth_stats = match (&depth, visible) {
            (Some(d), true) => Some(compute_depth_stats(d, &tm.mask)?),
            _ => None,
        };
        let visual_features = match (&adapters.feature_extractor, visible) {
            (Some(f), true) => Some(
                f.extract(image, &tm.mask, previous)
                    .map_err(|message| PerceptionError::Adapter { stage: Stage::Features, frame: t, message })?,
            ),
            _ => None,
        };
        let description = state.labels.get(&tm.instance_id).cloned();
        if visible {
            spatial_inputs.push(SpatialInput {
                instance_id: tm.instance_id.clone(),
                label: description.clone(),
                centroid: centroid.unwrap_or_default(),
                depth: depth_stats,
            });
        }
        instances.insert(
            tm.instance_id.clone(),
            InstanceRecord {
                instance_id: tm.instance_id.clone(),
                mask: MaskRef::Inline(encode_rle(&tm.mask)?),
                confidence: tm.confidence,
                depth_stats,
                description,
                visual_features,
                centroid,
                propagated: !is_key,
            },
        );
    }

    let (spatial_description, relations) = if depth.is_some() {
        let (text, rels) = derive_spatial_description(&spatial_inputs, [image.height(), image.width()], config)?;
        (Some(text), rels)
    } else {
        (None, Vec::new())
    };

    Ok(FrameRecord {
        timestamp: t,
        scene_description: state.scene.clone(),
        spatial_description,
        relations,
        instances,
        propagated: !is_key,
    })
}
