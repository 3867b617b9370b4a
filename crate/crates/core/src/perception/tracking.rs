use std::collections::BTreeMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{PerceptionConfig, PerceptionError, Segmenter, Stage};
use crate::dtcore::{decode_rle, encode_rle, Bitmap, MaskRle};

/// Last known state of one tracked instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    /// Most recent non-empty mask.
    pub mask: MaskRle,
    /// Frame the mask was observed at.
    pub last_seen: u32,
    pub confidence: f64,
}

/// Tracker memory carried between frames of one video.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackMemory {
    pub tracks: BTreeMap<String, Track>,
    pub next_id: u32,
}

impl TrackMemory {
    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn mask(&self, id: &str) -> Option<Bitmap> {
        self.tracks.get(id).and_then(|t| decode_rle(&t.mask).ok())
    }

    fn fresh_id(&mut self) -> String {
        self.next_id += 1;
        format!("obj_{:03}", self.next_id)
    }

    fn observe(&mut self, id: &str, t: u32, mask: &Bitmap, confidence: f64) -> Result<(), PerceptionError> {
        let rle = encode_rle(mask)?;
        self.tracks.insert(
            id.to_string(),
            Track { mask: rle, last_seen: t, confidence },
        );
        Ok(())
    }
}

/// A mask with its track id for one frame. Empty masks mark instances the tracker lost.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedMask {
    pub instance_id: String,
    pub mask: Bitmap,
    pub confidence: f64,
}

fn adapter_err(stage: Stage, t: u32) -> impl Fn(String) -> PerceptionError {
    move |message| PerceptionError::Adapter { stage, frame: t, message }
}

fn check_dims(mask: &Bitmap, frame: &RgbImage, stage: Stage, t: u32) -> Result<(), PerceptionError> {
    if mask.height() != frame.height() as usize || mask.width() != frame.width() as usize {
        return Err(PerceptionError::Adapter {
            stage,
            frame: t,
            message: format!(
                "mask {}x{} does not match frame {}x{}",
                mask.height(),
                mask.width(),
                frame.height(),
                frame.width()
            ),
        });
    }
    Ok(())
}

/// Segments a key frame and assigns track ids.
///
/// Detections under the confidence floor are dropped. The survivors are
/// matched greedily, by descending IoU, to the tracker's predictions for the
/// known instances; a match needs IoU of at least `match_iou`. Unmatched
/// detections open new tracks. Known instances without a match are returned
/// with an empty mask and leave the memory.
pub fn segment_keyframe(
    segmenter: &dyn Segmenter,
    t: u32,
    frame: &RgbImage,
    memory: &mut TrackMemory,
    config: &PerceptionConfig,
) -> Result<Vec<TrackedMask>, PerceptionError> {
    let detections = segmenter.segment(t, frame).map_err(adapter_err(Stage::Segmentation, t))?;
    let mut kept = Vec::new();
    for d in detections {
        check_dims(&d.mask, frame, Stage::Segmentation, t)?;
        if d.confidence >= config.confidence_floor && !d.mask.is_empty() {
            kept.push(d);
        }
    }
    let predictions = if memory.is_empty() {
        BTreeMap::new()
    } else {
        segmenter
            .propagate(t, frame, memory)
            .map_err(adapter_err(Stage::Tracking, t))?
    };

    let mut pairs = Vec::new();
    for (di, d) in kept.iter().enumerate() {
        for (id, pred) in &predictions {
            check_dims(pred, frame, Stage::Tracking, t)?;
            if let Some(iou) = d.mask.iou(pred) {
                if iou >= config.match_iou {
                    pairs.push((iou, di, id.clone()));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_id: Vec<Option<String>> = vec![None; kept.len()];
    let mut taken = std::collections::BTreeSet::new();
    for (_, di, id) in pairs {
        if det_id[di].is_none() && !taken.contains(&id) {
            taken.insert(id.clone());
            det_id[di] = Some(id);
        }
    }

    let (h, w) = (frame.height() as usize, frame.width() as usize);
    let mut out = Vec::new();
    let lost: Vec<String> = memory
        .tracks
        .keys()
        .filter(|id| !taken.contains(*id))
        .cloned()
        .collect();
    for id in lost {
        let confidence = memory.tracks[&id].confidence;
        memory.tracks.remove(&id);
        out.push(TrackedMask { instance_id: id, mask: Bitmap::new(h, w), confidence });
    }
    for (d, id) in kept.into_iter().zip(det_id) {
        let id = match id {
            Some(id) => id,
            None => memory.fresh_id(),
        };
        memory.observe(&id, t, &d.mask, d.confidence)?;
        out.push(TrackedMask { instance_id: id, mask: d.mask, confidence: d.confidence });
    }
    out.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    Ok(out)
}

/// Propagates every tracked instance to a non-key frame.
///
/// Instances the tracker cannot place get an empty mask and keep their id
/// and last known mask in memory.
pub fn track_to_frame(
    segmenter: &dyn Segmenter,
    t: u32,
    frame: &RgbImage,
    memory: &mut TrackMemory,
) -> Result<Vec<TrackedMask>, PerceptionError> {
    let masks = if memory.is_empty() {
        BTreeMap::new()
    } else {
        segmenter
            .propagate(t, frame, memory)
            .map_err(adapter_err(Stage::Tracking, t))?
    };
    let (h, w) = (frame.height() as usize, frame.width() as usize);
    let mut out = Vec::new();
    let ids: Vec<String> = memory.tracks.keys().cloned().collect();
    for id in ids {
        let confidence = memory.tracks[&id].confidence;
        let mask = match masks.get(&id) {
            Some(m) => {
                check_dims(m, frame, Stage::Tracking, t)?;
                m.clone()
            }
            None => Bitmap::new(h, w),
        };
        if !mask.is_empty() {
            memory.observe(&id, t, &mask, confidence)?;
        }
        out.push(TrackedMask { instance_id: id, mask, confidence });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::mock::{ScriptedObject, ScriptedScene, ScriptedSegmenter};

    fn scene() -> ScriptedScene {
        ScriptedScene::new(32, 32)
            .with(ScriptedObject::new("a red cube", [255, 0, 0], 200.0).size(6, 6).at(2.0, 2.0))
            .with(ScriptedObject::new("a blue ball", [0, 0, 255], 40.0).size(4, 4).at(20.0, 20.0).confidence(0.3))
    }

    #[test]
    fn confidence_floor_filters_detections() {
        let s = scene();
        let seg = ScriptedSegmenter::new(s.clone());
        let mut mem = TrackMemory::default();
        let out = segment_keyframe(&seg, 1, &s.render(1), &mut mem, &PerceptionConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].instance_id, "obj_001");
        assert_eq!(out[0].confidence, 0.9);
    }

    #[test]
    fn empty_detection_set_is_valid() {
        let s = ScriptedScene::new(8, 8);
        let seg = ScriptedSegmenter::new(s.clone());
        let mut mem = TrackMemory::default();
        let out = segment_keyframe(&seg, 1, &s.render(1), &mut mem, &PerceptionConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn same_square_keeps_its_id_across_key_frames() {
        let s = ScriptedScene::new(32, 32)
            .with(ScriptedObject::new("square", [0, 255, 0], 100.0).size(8, 8).at(4.0, 4.0).velocity(1.0, 0.0));
        let seg = ScriptedSegmenter::new(s.clone());
        let mut mem = TrackMemory::default();
        let cfg = PerceptionConfig::default();
        let a = segment_keyframe(&seg, 1, &s.render(1), &mut mem, &cfg).unwrap();
        let b = segment_keyframe(&seg, 3, &s.render(3), &mut mem, &cfg).unwrap();
        assert_eq!(a[0].instance_id, b[0].instance_id);
        assert_eq!(mem.tracks.len(), 1);
    }

    #[test]
    fn vanished_instance_gets_empty_mask_and_keeps_id() {
        let s = ScriptedScene::new(16, 16)
            .with(ScriptedObject::new("blink", [9, 9, 9], 10.0).size(3, 3).at(1.0, 1.0).visible(1, 2));
        let seg = ScriptedSegmenter::new(s.clone());
        let mut mem = TrackMemory::default();
        segment_keyframe(&seg, 1, &s.render(1), &mut mem, &PerceptionConfig::default()).unwrap();
        let f2 = track_to_frame(&seg, 2, &s.render(2), &mut mem).unwrap();
        assert_eq!(f2[0].mask.area(), 9);
        let f3 = track_to_frame(&seg, 3, &s.render(3), &mut mem).unwrap();
        assert_eq!(f3.len(), 1);
        assert_eq!(f3[0].instance_id, "obj_001");
        assert!(f3[0].mask.is_empty());
        assert_eq!(mem.tracks["obj_001"].last_seen, 2);
    }

    #[test]
    fn static_square_is_identical_on_propagated_frames() {
        let s = ScriptedScene::new(16, 16)
            .with(ScriptedObject::new("still", [1, 2, 3], 10.0).size(5, 4).at(3.0, 6.0));
        let seg = ScriptedSegmenter::new(s.clone());
        let mut mem = TrackMemory::default();
        let k = segment_keyframe(&seg, 1, &s.render(1), &mut mem, &PerceptionConfig::default()).unwrap();
        for t in 2..5 {
            let f = track_to_frame(&seg, t, &s.render(t), &mut mem).unwrap();
            assert_eq!(f[0].mask, k[0].mask);
        }
    }

    #[test]
    fn moving_square_lands_at_scripted_positions() {
        let s = ScriptedScene::new(40, 40)
            .with(ScriptedObject::new("mover", [200, 10, 10], 10.0).size(4, 4).at(2.0, 5.0).velocity(3.0, 1.0));
        let seg = ScriptedSegmenter::new(s.clone());
        let mut mem = TrackMemory::default();
        segment_keyframe(&seg, 1, &s.render(1), &mut mem, &PerceptionConfig::default()).unwrap();
        for t in 2..6u32 {
            let f = track_to_frame(&seg, t, &s.render(t), &mut mem).unwrap();
            let x0 = 2 + 3 * (t as usize - 1);
            let y0 = 5 + (t as usize - 1);
            let expected = Bitmap::from_fn(40, 40, |y, x| (x0..x0 + 4).contains(&x) && (y0..y0 + 4).contains(&y));
            assert_eq!(f[0].mask, expected, "frame {t}");
        }
    }
}
