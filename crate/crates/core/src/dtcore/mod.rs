//! Digital-twin data model, benchmark sample types, mask encoding and validation.

mod codec;
mod mask;
mod sample;
mod twin;
mod validate;

pub use codec::{
    downsample_twin, external_mask_path, externalize_masks, load_twin_file, parse_twin,
    read_rle_file, resolve_masks, round2, serialize_twin, serialize_twin_with, write_rle_file,
    Profile,
};
pub use mask::{decode_rle, encode_rle, Bitmap, MaskRle};
pub use sample::{
    validate_sample, BoxSequence, BoxXywh, GroundTruth, MaskSequence, ReasoningCategory,
    RvtSample, TaskType,
};
pub use twin::{
    DepthRelation, DepthStats, DigitalTwin, FrameRecord, Fps, InstanceRecord, MaskRef,
    PlanarRelation, Severity, SpatialRelation, VideoMeta, Violation, VisualFeatures,
};
pub use validate::{validate_twin, validate_twin_with, ValidationMode};

#[derive(Debug, thiserror::Error)]
pub enum DtError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("corrupt mask: {0}")]
    Corruption(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("twin fails validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use std::collections::BTreeMap;

    fn square(h: usize, w: usize, y0: usize, x0: usize, size: usize) -> MaskRle {
        encode_rle(&Bitmap::from_fn(h, w, |y, x| {
            (y0..y0 + size).contains(&y) && (x0..x0 + size).contains(&x)
        }))
        .unwrap()
    }

    fn instance(id: &str, mask: MaskRle, centroid: [f64; 2], depth: f64, desc: &str) -> InstanceRecord {
        let mut hist = [[0.0; 8]; 3];
        hist[0][7] = 1.0;
        hist[1][0] = 1.0;
        hist[2][0] = 1.0;
        InstanceRecord {
            instance_id: id.into(),
            mask: MaskRef::Inline(mask),
            confidence: 0.9,
            depth_stats: Some(DepthStats { mean: depth, std: 0.0 }),
            description: Some(desc.into()),
            visual_features: Some(VisualFeatures {
                color_histogram: hist,
                motion: [0.0, 0.0],
                texture: 0.0,
            }),
            centroid: Some(centroid),
            propagated: false,
        }
    }

    fn frame(t: u32) -> FrameRecord {
        let mut instances = BTreeMap::new();
        instances.insert(
            "obj_001".to_string(),
            instance("obj_001", square(8, 8, 0, 0, 2), [0.5, 0.5], 200.0, "a bear with a thick, shaggy coat"),
        );
        instances.insert(
            "obj_002".to_string(),
            instance("obj_002", square(8, 8, 4, 4, 2), [4.5, 4.5], 40.0, "a red sedan"),
        );
        FrameRecord {
            timestamp: t,
            scene_description: Some("a forest road".into()),
            spatial_description: Some("the bear is in front of and to the left of the sedan".into()),
            relations: vec![SpatialRelation {
                subject: "obj_001".into(),
                object: "obj_002".into(),
                depth: DepthRelation::InFrontOf,
                planar: PlanarRelation::LeftOf,
            }],
            instances,
            propagated: false,
        }
    }

    pub fn twin_with_frames(n: u32) -> DigitalTwin {
        DigitalTwin {
            metadata: VideoMeta {
                video_id: "vid".into(),
                description: "a bear walks past a parked car".into(),
                duration: n,
                resolution: [8, 8],
                fps: Fps::default(),
                source: "synthetic".into(),
            },
            frames: (1..=n).map(frame).collect(),
            keyframe_indices: [1].into(),
        }
    }

    pub fn two_frame_twin() -> DigitalTwin {
        twin_with_frames(2)
    }
}
