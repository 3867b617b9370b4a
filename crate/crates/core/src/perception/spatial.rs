use super::{DepthPolarity, PerceptionConfig, PerceptionError};
use crate::dtcore::{DepthRelation, DepthStats, PlanarRelation, SpatialRelation};

/// What the spatial rules need to know about one visible instance.
#[derive(Debug, Clone)]
pub struct SpatialInput {
    pub instance_id: String,
    /// Human-readable label, usually the instance description.
    pub label: Option<String>,
    pub centroid: [f64; 2],
    pub depth: Option<DepthStats>,
}

fn depth_relation(a: &DepthStats, b: &DepthStats, config: &PerceptionConfig) -> DepthRelation {
    if (a.mean - b.mean).abs() <= config.same_distance_threshold {
        return DepthRelation::SameDistance;
    }
    let a_closer = match config.depth_polarity {
        DepthPolarity::LargerIsCloser => a.mean > b.mean,
        DepthPolarity::SmallerIsCloser => a.mean < b.mean,
    };
    if a_closer {
        DepthRelation::InFrontOf
    } else {
        DepthRelation::Behind
    }
}

fn planar_relation(a: [f64; 2], b: [f64; 2], depth: DepthRelation, diag: f64, config: &PerceptionConfig) -> PlanarRelation {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let dist = (dx * dx + dy * dy).sqrt();
    if depth == DepthRelation::SameDistance && dist < config.next_to_fraction * diag {
        return PlanarRelation::NextTo;
    }
    if dx.abs() >= dy.abs() {
        if a[0] < b[0] {
            PlanarRelation::LeftOf
        } else {
            PlanarRelation::RightOf
        }
    } else if a[1] < b[1] {
        PlanarRelation::Above
    } else {
        PlanarRelation::Below
    }
}

/// Label for text: digits removed, leading article dropped, "the" prefixed.
fn display_name(input: &SpatialInput) -> String {
    let raw = input.label.as_deref().unwrap_or("object");
    let cleaned: String = raw.chars().filter(|c| !c.is_ascii_digit()).collect();
    let cleaned = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    let lower = cleaned.to_lowercase();
    let body = ["a ", "an ", "the "]
        .iter()
        .find_map(|a| lower.starts_with(a).then(|| cleaned[a.len()..].to_string()))
        .unwrap_or(cleaned);
    if body.is_empty() {
        "the object".to_string()
    } else {
        format!("the {body}")
    }
}

fn phrase(rel: &SpatialRelation) -> String {
    let depth = match rel.depth {
        DepthRelation::SameDistance => "at about the same distance as",
        DepthRelation::InFrontOf => "in front of",
        DepthRelation::Behind => "behind",
    };
    match rel.planar {
        PlanarRelation::NextTo => "next to".to_string(),
        PlanarRelation::LeftOf => format!("{depth} and to the left of"),
        PlanarRelation::RightOf => format!("{depth} and to the right of"),
        PlanarRelation::Above => format!("{depth} and above"),
        PlanarRelation::Below => format!("{depth} and below"),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Pairwise depth and planar relations plus a qualitative, digit-free text rendering.
///
/// Each unordered pair appears once, oriented from the lexicographically smaller id.
pub fn derive_spatial_description(
    instances: &[SpatialInput],
    resolution: [u32; 2],
    config: &PerceptionConfig,
) -> Result<(String, Vec<SpatialRelation>), PerceptionError> {
    if let Some(missing) = instances.iter().find(|i| i.depth.is_none()) {
        return Err(PerceptionError::Missing(format!(
            "instance {} has no depth statistics",
            missing.instance_id
        )));
    }
    let mut sorted: Vec<&SpatialInput> = instances.iter().collect();
    sorted.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    let [h, w] = resolution;
    if sorted.is_empty() {
        return Ok(("No objects are visible.".to_string(), Vec::new()));
    }
    if sorted.len() == 1 {
        let x = sorted[0].centroid[0];
        let third = if x < w as f64 / 3.0 {
            "left"
        } else if x < 2.0 * w as f64 / 3.0 {
            "center"
        } else {
            "right"
        };
        let text = format!("{} is in the {third} part of the frame.", capitalize(&display_name(sorted[0])));
        return Ok((text, Vec::new()));
    }
    let diag = ((h as f64).powi(2) + (w as f64).powi(2)).sqrt();
    let mut relations = Vec::new();
    let mut sentences = Vec::new();
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            let depth = depth_relation(a.depth.as_ref().unwrap(), b.depth.as_ref().unwrap(), config);
            let planar = planar_relation(a.centroid, b.centroid, depth, diag, config);
            let rel = SpatialRelation {
                subject: a.instance_id.clone(),
                object: b.instance_id.clone(),
                depth,
                planar,
            };
            sentences.push(format!(
                "{} is {} {}.",
                capitalize(&display_name(a)),
                phrase(&rel),
                display_name(b)
            ));
            relations.push(rel);
        }
    }
    Ok((sentences.join(" "), relations))
}
