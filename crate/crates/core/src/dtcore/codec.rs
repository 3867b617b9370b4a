use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::mask::MaskRle;
use super::twin::{DigitalTwin, MaskRef, Violation};
use super::validate::{validate_twin_with, ValidationMode};
use super::DtError;

/// Serialization profile for a twin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Lossless, every field at full precision.
    Storage,
    /// Compact payload for model prompts: reals rounded to two decimals, masks
    /// replaced by their area and bounding box.
    Prompt,
}

/// Canonical JSON text with sorted keys. Requires a valid twin.
pub fn serialize_twin(twin: &DigitalTwin, profile: Profile) -> Result<String, DtError> {
    serialize_twin_with(twin, profile, ValidationMode::Full)
}

pub fn serialize_twin_with(
    twin: &DigitalTwin,
    profile: Profile,
    mode: ValidationMode,
) -> Result<String, DtError> {
    let violations: Vec<Violation> = validate_twin_with(twin, mode);
    if !violations.is_empty() {
        return Err(DtError::Invalid(violations));
    }
    let value = match profile {
        Profile::Storage => serde_json::to_value(twin)?,
        Profile::Prompt => prompt_value(twin),
    };
    Ok(match profile {
        Profile::Storage => serde_json::to_string_pretty(&value)?,
        Profile::Prompt => serde_json::to_string(&value)?,
    })
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn prompt_value(twin: &DigitalTwin) -> Value {
    let frames: Vec<Value> = twin
        .frames
        .iter()
        .map(|f| {
            let instances: Map<String, Value> = f
                .instances
                .iter()
                .map(|(id, inst)| {
                    let mut o = Map::new();
                    o.insert("confidence".into(), json!(round2(inst.confidence)));
                    o.insert(
                        "depth_stats".into(),
                        inst.depth_stats
                            .map_or(Value::Null, |d| json!([round2(d.mean), round2(d.std)])),
                    );
                    o.insert("description".into(), json!(inst.description));
                    o.insert(
                        "centroid".into(),
                        inst.centroid
                            .map_or(Value::Null, |[x, y]| json!([round2(x), round2(y)])),
                    );
                    if let Some(m) = inst.mask_rle() {
                        o.insert("area".into(), json!(m.area()));
                        o.insert(
                            "bbox".into(),
                            m.bounding_box()
                                .map_or(Value::Null, |(x, y, w, h)| json!([x, y, w, h])),
                        );
                    }
                    if let Some(v) = &inst.visual_features {
                        let hist: Vec<Vec<f64>> = v
                            .color_histogram
                            .iter()
                            .map(|c| c.iter().map(|b| round2(*b)).collect())
                            .collect();
                        o.insert(
                            "visual_features".into(),
                            json!({
                                "color_histogram": hist,
                                "motion": [round2(v.motion[0]), round2(v.motion[1])],
                                "texture": round2(v.texture),
                            }),
                        );
                    }
                    if inst.propagated {
                        o.insert("propagated".into(), json!(true));
                    }
                    (id.clone(), Value::Object(o))
                })
                .collect();
            let relations: Vec<Value> = f
                .relations
                .iter()
                .map(|r| json!([r.subject, r.depth.as_str(), r.planar.as_str(), r.object]))
                .collect();
            json!({
                "timestamp": f.timestamp,
                "scene_description": f.scene_description,
                "spatial_description": f.spatial_description,
                "relations": relations,
                "instances": instances,
            })
        })
        .collect();
    json!({
        "metadata": {
            "video_id": twin.metadata.video_id,
            "description": twin.metadata.description,
            "duration": twin.metadata.duration,
            "resolution": twin.metadata.resolution,
        },
        "frames": frames,
    })
}

#[derive(Clone, Copy)]
enum Kind {
    Object,
    Array,
    String,
    Number,
    UInt,
}

impl Kind {
    fn accepts(self, v: &Value) -> bool {
        match self {
            Kind::Object => v.is_object(),
            Kind::Array => v.is_array(),
            Kind::String => v.is_string(),
            Kind::Number => v.is_number(),
            Kind::UInt => v.is_u64(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Object => "object",
            Kind::Array => "array",
            Kind::String => "string",
            Kind::Number => "number",
            Kind::UInt => "non-negative integer",
        }
    }
}

fn require<'a>(obj: &'a Value, path: &str, key: &str, kind: Kind) -> Result<&'a Value, DtError> {
    let at = if path.is_empty() { key.to_string() } else { format!("{path}.{key}") };
    match obj.get(key) {
        None | Some(Value::Null) => Err(DtError::Schema {
            path: at,
            message: "missing required field".into(),
        }),
        Some(v) if !kind.accepts(v) => Err(DtError::Schema {
            path: at,
            message: format!("expected {}", kind.name()),
        }),
        Some(v) => Ok(v),
    }
}

/// Walks the required skeleton so schema errors carry the first failing path.
fn check_shape(v: &Value) -> Result<(), DtError> {
    if !v.is_object() {
        return Err(DtError::Schema { path: "$".into(), message: "expected object".into() });
    }
    let meta = require(v, "", "metadata", Kind::Object)?;
    require(meta, "metadata", "description", Kind::String)?;
    require(meta, "metadata", "duration", Kind::UInt)?;
    require(meta, "metadata", "resolution", Kind::Array)?;
    let frames = require(v, "", "frames", Kind::Array)?;
    for (i, f) in frames.as_array().into_iter().flatten().enumerate() {
        let fp = format!("frames[{i}]");
        require(f, &fp, "timestamp", Kind::UInt)?;
        if let Some(insts) = f.get("instances") {
            let Some(insts) = insts.as_object() else {
                return Err(DtError::Schema {
                    path: format!("{fp}.instances"),
                    message: "expected object".into(),
                });
            };
            for (id, inst) in insts {
                let ip = format!("{fp}.instances.{id}");
                require(inst, &ip, "instance_id", Kind::String)?;
                require(inst, &ip, "mask", Kind::Object)?;
                require(inst, &ip, "confidence", Kind::Number)?;
            }
        }
    }
    Ok(())
}

/// Parses storage-profile JSON into a twin. Both inline and external mask layouts parse.
pub fn parse_twin(text: &str) -> Result<DigitalTwin, DtError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DtError::Schema {
        path: "$".into(),
        message: format!("malformed JSON: {e}"),
    })?;
    check_shape(&value)?;
    serde_json::from_value(value).map_err(|e| DtError::Schema {
        path: "$".into(),
        message: e.to_string(),
    })
}

/// Keeps frames `d, 2d, ..., floor(T/d)*d`. An empty result carries a warning.
pub fn downsample_twin(twin: &DigitalTwin, d: u32) -> Result<(DigitalTwin, Vec<Violation>), DtError> {
    if d < 1 {
        return Err(DtError::Argument("downsampling interval must be at least 1".into()));
    }
    let t = twin.metadata.duration;
    let wanted: Vec<u32> = (1..=t / d).map(|i| i * d).collect();
    let mut warnings = Vec::new();
    let mut frames = Vec::with_capacity(wanted.len());
    for ts in &wanted {
        match twin.frame(*ts) {
            Some(f) => frames.push(f.clone()),
            None => warnings.push(Violation::warning(
                "frames",
                format!("sampled timestamp {ts} is not recorded in the twin"),
            )),
        }
    }
    if frames.is_empty() {
        warnings.push(Violation::warning(
            "frames",
            format!("downsampling interval {d} exceeds duration {t}; no frames kept"),
        ));
    }
    let keyframe_indices = twin
        .keyframe_indices
        .iter()
        .copied()
        .filter(|k| frames.iter().any(|f| f.timestamp == *k))
        .collect();
    Ok((
        DigitalTwin {
            metadata: twin.metadata.clone(),
            frames,
            keyframe_indices,
        },
        warnings,
    ))
}

pub fn external_mask_path(video_id: &str, instance_id: &str, timestamp: u32) -> String {
    format!("masks/{video_id}/{instance_id}/{timestamp}.rle")
}

pub fn write_rle_file(path: &Path, rle: &MaskRle) -> Result<(), DtError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string(rle)?)?;
    Ok(())
}

pub fn read_rle_file(path: &Path) -> Result<MaskRle, DtError> {
    let text = fs::read_to_string(path)?;
    let rle: MaskRle = serde_json::from_str(&text).map_err(|e| DtError::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    rle.check()?;
    Ok(rle)
}

/// Moves every inline mask to `root/masks/<video>/<instance>/<t>.rle`.
pub fn externalize_masks(twin: &DigitalTwin, root: &Path) -> Result<DigitalTwin, DtError> {
    let mut out = twin.clone();
    let vid = out.metadata.video_id.clone();
    for f in &mut out.frames {
        for inst in f.instances.values_mut() {
            if let MaskRef::Inline(m) = &inst.mask {
                let rel = external_mask_path(&vid, &inst.instance_id, f.timestamp);
                write_rle_file(&root.join(&rel), m)?;
                inst.mask = MaskRef::External { path: rel };
            }
        }
    }
    Ok(out)
}

/// Loads external masks back inline, resolving paths against `root`.
pub fn resolve_masks(twin: &DigitalTwin, root: &Path) -> Result<DigitalTwin, DtError> {
    let mut out = twin.clone();
    for f in &mut out.frames {
        for inst in f.instances.values_mut() {
            if let MaskRef::External { path } = &inst.mask {
                let full: PathBuf = root.join(path);
                inst.mask = MaskRef::Inline(read_rle_file(&full)?);
            }
        }
    }
    Ok(out)
}

/// Reads `twins/<id>.json` style files, resolving external masks relative to `root`.
pub fn load_twin_file(path: &Path, root: &Path) -> Result<DigitalTwin, DtError> {
    let twin = parse_twin(&fs::read_to_string(path)?)?;
    resolve_masks(&twin, root)
}
