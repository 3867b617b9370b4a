use std::collections::BTreeSet;

use super::twin::{DigitalTwin, InstanceRecord, MaskRef, Violation};

/// How strictly completeness is checked.
///
/// `Partial` tolerates missing descriptions, depth statistics, features and
/// frame-level text, which is what capability-gated twins and in-progress
/// checkpoints contain. Structural rules apply in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    #[default]
    Full,
    Partial,
}

pub fn validate_twin(twin: &DigitalTwin) -> Vec<Violation> {
    validate_twin_with(twin, ValidationMode::Full)
}

pub fn validate_twin_with(twin: &DigitalTwin, mode: ValidationMode) -> Vec<Violation> {
    let mut out = Vec::new();
    let meta = &twin.metadata;
    let [h, w] = meta.resolution;
    if meta.duration < 1 {
        out.push(Violation::error("metadata.duration", "duration must be at least 1"));
    }
    if h < 1 || w < 1 {
        out.push(Violation::error("metadata.resolution", "height and width must be at least 1"));
    }
    if mode == ValidationMode::Full && meta.description.trim().is_empty() {
        out.push(Violation::error("metadata.description", "description must be non-empty"));
    }
    if twin.frames.len() > meta.duration as usize {
        out.push(Violation::error(
            "frames",
            format!("{} frames exceed duration {}", twin.frames.len(), meta.duration),
        ));
    }

    let mut seen = BTreeSet::new();
    let mut prev: Option<u32> = None;
    for (fi, frame) in twin.frames.iter().enumerate() {
        let t = frame.timestamp;
        if !seen.insert(t) {
            out.push(Violation::error("frames", format!("duplicate timestamp {t}")));
        } else if prev.is_some_and(|p| t <= p) {
            out.push(Violation::error(
                "frames",
                format!("timestamps not strictly increasing at index {fi}"),
            ));
        }
        prev = Some(prev.map_or(t, |p| p.max(t)));
        let fpath = format!("frames[{fi}]");
        if t < 1 || t > meta.duration {
            out.push(Violation::error(
                format!("{fpath}.timestamp"),
                format!("timestamp {t} outside 1..={}", meta.duration),
            ));
        }
        if mode == ValidationMode::Full {
            if frame.scene_description.as_deref().is_none_or(|s| s.trim().is_empty()) {
                out.push(Violation::error(
                    format!("{fpath}.scene_description"),
                    "scene description missing",
                ));
            }
            if frame.spatial_description.is_none() {
                out.push(Violation::error(
                    format!("{fpath}.spatial_description"),
                    "spatial description missing",
                ));
            }
        }
        for rel in &frame.relations {
            for id in [&rel.subject, &rel.object] {
                if !frame.instances.contains_key(id) {
                    out.push(Violation::error(
                        format!("{fpath}.relations"),
                        format!("relation names unknown instance {id}"),
                    ));
                }
            }
        }
        for (key, inst) in &frame.instances {
            let ipath = format!("{fpath}.instances.{key}");
            if key != &inst.instance_id {
                out.push(Violation::error(
                    format!("{ipath}.instance_id"),
                    format!("instance_id {} does not match its key", inst.instance_id),
                ));
            }
            check_instance(inst, &ipath, [h, w], mode, &mut out);
        }
    }
    for k in &twin.keyframe_indices {
        if !seen.contains(k) {
            out.push(Violation::error(
                "keyframe_indices",
                format!("key frame {k} is not a recorded timestamp"),
            ));
        }
    }
    out
}

fn check_instance(
    inst: &InstanceRecord,
    ipath: &str,
    [h, w]: [u32; 2],
    mode: ValidationMode,
    out: &mut Vec<Violation>,
) {
    let mut visible = inst.centroid.is_some();
    match &inst.mask {
        MaskRef::Inline(m) => {
            if m.size != [h, w] {
                out.push(Violation::error(
                    format!("{ipath}.mask"),
                    format!(
                        "instance {} mask size {:?} differs from video resolution {:?}",
                        inst.instance_id,
                        m.size,
                        [h, w]
                    ),
                ));
            } else if let Err(e) = m.check() {
                out.push(Violation::error(format!("{ipath}.mask"), e.to_string()));
            }
            visible = !m.is_empty();
        }
        MaskRef::External { path } => {
            if path.is_empty() {
                out.push(Violation::error(format!("{ipath}.mask"), "empty external mask path"));
            }
        }
    }
    if !(0.0..=1.0).contains(&inst.confidence) {
        out.push(Violation::error(
            format!("{ipath}.confidence"),
            format!("confidence {} outside [0, 1]", inst.confidence),
        ));
    }
    if let Some(d) = &inst.depth_stats {
        if !(d.std >= 0.0) {
            out.push(Violation::error(format!("{ipath}.depth_stats"), "std must be non-negative"));
        }
        if !(0.0..=255.0).contains(&d.mean) {
            out.push(Violation::error(format!("{ipath}.depth_stats"), "mean outside [0, 255]"));
        }
        if !visible {
            out.push(Violation::error(
                format!("{ipath}.depth_stats"),
                "empty mask must not carry depth statistics",
            ));
        }
    }
    if let Some(v) = &inst.visual_features {
        for (c, channel) in v.color_histogram.iter().enumerate() {
            let s: f64 = channel.iter().sum();
            if (s - 1.0).abs() > 1e-6 || channel.iter().any(|b| *b < 0.0) {
                out.push(Violation::error(
                    format!("{ipath}.visual_features.color_histogram[{c}]"),
                    format!("channel sums to {s}, expected 1"),
                ));
            }
        }
    }
    if let Some([x, y]) = inst.centroid {
        if !(x >= 0.0 && x < w as f64 && y >= 0.0 && y < h as f64) {
            out.push(Violation::error(
                format!("{ipath}.centroid"),
                format!("centroid ({x}, {y}) outside the frame"),
            ));
        }
    }
    if mode == ValidationMode::Full && visible {
        if inst.depth_stats.is_none() {
            out.push(Violation::error(format!("{ipath}.depth_stats"), "depth statistics missing"));
        }
        if inst.description.as_deref().is_none_or(|s| s.trim().is_empty()) {
            out.push(Violation::error(format!("{ipath}.description"), "description missing"));
        }
        if inst.visual_features.is_none() {
            out.push(Violation::error(
                format!("{ipath}.visual_features"),
                "visual features missing",
            ));
        }
        if inst.centroid.is_none() {
            out.push(Violation::error(format!("{ipath}.centroid"), "centroid missing"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtcore::testing::two_frame_twin;
    use crate::dtcore::MaskRle;

    #[test]
    fn well_formed_twin_has_no_violations() {
        assert_eq!(validate_twin(&two_frame_twin()), vec![]);
    }

    #[test]
    fn duplicate_timestamp_is_one_violation() {
        let mut twin = two_frame_twin();
        twin.frames[0].timestamp = 3;
        twin.frames[1].timestamp = 3;
        twin.metadata.duration = 4;
        twin.keyframe_indices = [3].into();
        let v = validate_twin(&twin);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].to_string().starts_with("frames: duplicate timestamp"));
    }

    #[test]
    fn wrong_mask_size_names_the_instance() {
        let mut twin = two_frame_twin();
        let inst = twin.frames[0].instances.get_mut("obj_001").unwrap();
        inst.mask = MaskRef::Inline(MaskRle { size: [4, 4], counts: vec![0, 16] });
        let v = validate_twin(&twin);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].path.contains("obj_001"));
        assert!(v[0].rule.contains("obj_001"));
    }

    #[test]
    fn partial_mode_tolerates_missing_fields() {
        let mut twin = two_frame_twin();
        twin.metadata.description.clear();
        for f in &mut twin.frames {
            f.spatial_description = None;
            for inst in f.instances.values_mut() {
                inst.depth_stats = None;
                inst.visual_features = None;
            }
        }
        assert!(!validate_twin(&twin).is_empty());
        assert_eq!(validate_twin_with(&twin, ValidationMode::Partial), vec![]);
    }

    #[test]
    fn keyframes_must_be_recorded() {
        let mut twin = two_frame_twin();
        twin.keyframe_indices.insert(9);
        let v = validate_twin(&twin);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "keyframe_indices");
    }

    #[test]
    fn bad_histogram_and_centroid_are_reported() {
        let mut twin = two_frame_twin();
        let inst = twin.frames[1].instances.get_mut("obj_002").unwrap();
        inst.visual_features.as_mut().unwrap().color_histogram[1][0] += 0.5;
        inst.centroid = Some([8.0, 1.0]);
        let v = validate_twin(&twin);
        assert_eq!(v.len(), 2, "{v:?}");
    }
}
