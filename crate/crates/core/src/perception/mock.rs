//! Scripted perception adapters.
//!
//! A [`ScriptedScene`] is a list of axis-aligned rectangles moving at constant
//! velocity over a flat background. The adapters read the script instead of
//! the pixels, so every mask, depth value and caption they return is known
//! exactly in advance.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{
    AdapterResult, AdapterSet, Captioner, ClassicalFeatures, DepthEstimator, DepthMap, Detection,
    Segmenter, TrackMemory,
};
use crate::dtcore::Bitmap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedObject {
    pub caption: String,
    pub color: [u8; 3],
    /// Raw depth value painted under the object.
    pub depth: f32,
    /// `[width, height]`
    pub size: [u32; 2],
    /// Top-left corner `[x, y]` at frame 1.
    pub start: [f64; 2],
    /// Pixels per frame.
    pub velocity: [f64; 2],
    /// Inclusive frame range in which the object exists.
    pub visible: [u32; 2],
    pub confidence: f64,
}

impl ScriptedObject {
    pub fn new(caption: impl Into<String>, color: [u8; 3], depth: f32) -> Self {
        Self {
            caption: caption.into(),
            color,
            depth,
            size: [4, 4],
            start: [0.0, 0.0],
            velocity: [0.0, 0.0],
            visible: [1, u32::MAX],
            confidence: 0.9,
        }
    }

    pub fn size(mut self, w: u32, h: u32) -> Self {
        self.size = [w, h];
        self
    }

    pub fn at(mut self, x: f64, y: f64) -> Self {
        self.start = [x, y];
        self
    }

    pub fn velocity(mut self, dx: f64, dy: f64) -> Self {
        self.velocity = [dx, dy];
        self
    }

    pub fn visible(mut self, first: u32, last: u32) -> Self {
        self.visible = [first, last];
        self
    }

    pub fn confidence(mut self, c: f64) -> Self {
        self.confidence = c;
        self
    }

    /// Rectangle `(x0, y0, x1, y1)`, half-open and clipped, or `None` when off screen.
    fn rect(&self, t: u32, height: u32, width: u32) -> Option<(usize, usize, usize, usize)> {
        if t < self.visible[0] || t > self.visible[1] {
            return None;
        }
        let k = (t - 1) as f64;
        let x = (self.start[0] + self.velocity[0] * k).round() as i64;
        let y = (self.start[1] + self.velocity[1] * k).round() as i64;
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = (x + self.size[0] as i64).min(width as i64);
        let y1 = (y + self.size[1] as i64).min(height as i64);
        (x0 < x1 && y0 < y1).then_some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }

    pub fn mask_at(&self, t: u32, height: u32, width: u32) -> Bitmap {
        match self.rect(t, height, width) {
            Some((x0, y0, x1, y1)) => Bitmap::from_fn(height as usize, width as usize, |y, x| {
                (x0..x1).contains(&x) && (y0..y1).contains(&y)
            }),
            None => Bitmap::new(height as usize, width as usize),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedScene {
    pub height: u32,
    pub width: u32,
    pub background: [u8; 3],
    pub background_depth: f32,
    pub objects: Vec<ScriptedObject>,
    pub scene_caption: String,
    pub video_caption: String,
}

impl ScriptedScene {
    pub fn new(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            background: [128, 128, 128],
            background_depth: 0.0,
            objects: Vec::new(),
            scene_caption: "A plain grey room.".into(),
            video_caption: "Objects move across a plain grey room.".into(),
        }
    }

    pub fn with(mut self, object: ScriptedObject) -> Self {
        self.objects.push(object);
        self
    }

    /// Objects in painting order: far to near under larger-is-closer depth.
    fn painting_order(&self) -> Vec<&ScriptedObject> {
        let mut objs: Vec<&ScriptedObject> = self.objects.iter().collect();
        objs.sort_by(|a, b| a.depth.total_cmp(&b.depth));
        objs
    }

    pub fn render(&self, t: u32) -> RgbImage {
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb(self.background));
        // a faint diagonal pattern gives block matching something to lock onto
        for (x, y, p) in img.enumerate_pixels_mut() {
            if (x + y) % 7 == 0 {
                p.0 = p.0.map(|c| c.saturating_sub(20));
            }
        }
        for obj in self.painting_order() {
            if let Some((x0, y0, x1, y1)) = obj.rect(t, self.height, self.width) {
                for y in y0..y1 {
                    for x in x0..x1 {
                        let shade = if (x - x0 + 2 * (y - y0)) % 3 == 0 { 30 } else { 0 };
                        let c = obj.color.map(|v| v.saturating_sub(shade));
                        img.put_pixel(x as u32, y as u32, Rgb(c));
                    }
                }
            }
        }
        img
    }

    pub fn frames(&self, duration: u32) -> Vec<RgbImage> {
        (1..=duration).map(|t| self.render(t)).collect()
    }

    pub fn depth_map(&self, t: u32) -> DepthMap {
        let (h, w) = (self.height as usize, self.width as usize);
        let mut d = DepthMap::constant(h, w, self.background_depth);
        for obj in self.painting_order() {
            if let Some((x0, y0, x1, y1)) = obj.rect(t, self.height, self.width) {
                for y in y0..y1 {
                    for x in x0..x1 {
                        d.values[y * w + x] = obj.depth;
                    }
                }
            }
        }
        d
    }

    /// The object whose mask at `t` overlaps `mask` most.
    fn identify(&self, t: u32, mask: &Bitmap) -> Option<&ScriptedObject> {
        let mut best: Option<(usize, &ScriptedObject)> = None;
        for obj in &self.objects {
            let overlap = obj.mask_at(t, self.height, self.width).intersection_area(mask);
            if overlap > 0 && best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, obj));
            }
        }
        best.map(|(_, o)| o)
    }

    /// Full adapter suite over this scene plus a handle on the captioner's call log.
    pub fn adapters(&self) -> (AdapterSet, Arc<ScriptedCaptioner>) {
        let captioner = Arc::new(ScriptedCaptioner::new(self.clone()));
        let set = AdapterSet {
            segmenter: Arc::new(ScriptedSegmenter::new(self.clone())),
            depth_estimator: Some(Arc::new(ScriptedDepth::new(self.clone()))),
            captioner: Some(captioner.clone()),
            feature_extractor: Some(Arc::new(ClassicalFeatures::default())),
        };
        (set, captioner)
    }
}

/// Segmenter and tracker that read object positions from the script.
pub struct ScriptedSegmenter {
    scene: ScriptedScene,
}

impl ScriptedSegmenter {
    pub fn new(scene: ScriptedScene) -> Self {
        Self { scene }
    }
}

impl Segmenter for ScriptedSegmenter {
    fn model_id(&self) -> String {
        "scripted-segmenter".into()
    }

    fn segment(&self, t: u32, _frame: &RgbImage) -> AdapterResult<Vec<Detection>> {
        let s = &self.scene;
        Ok(s.objects
            .iter()
            .map(|o| Detection { mask: o.mask_at(t, s.height, s.width), confidence: o.confidence })
            .filter(|d| !d.mask.is_empty())
            .collect())
    }

    fn propagate(&self, t: u32, _frame: &RgbImage, memory: &TrackMemory) -> AdapterResult<BTreeMap<String, Bitmap>> {
        let s = &self.scene;
        let mut out = BTreeMap::new();
        for (id, track) in &memory.tracks {
            let Some(last) = memory.mask(id) else { continue };
            if let Some(obj) = s.identify(track.last_seen, &last) {
                let m = obj.mask_at(t, s.height, s.width);
                if !m.is_empty() {
                    out.insert(id.clone(), m);
                }
            }
        }
        Ok(out)
    }
}

pub struct ScriptedDepth {
    scene: ScriptedScene,
}

impl ScriptedDepth {
    pub fn new(scene: ScriptedScene) -> Self {
        Self { scene }
    }
}

impl DepthEstimator for ScriptedDepth {
    fn model_id(&self) -> String {
        "scripted-depth".into()
    }

    fn estimate(&self, t: u32, _frame: &RgbImage) -> AdapterResult<DepthMap> {
        Ok(self.scene.depth_map(t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaptionCall {
    Instance(u32),
    Scene(u32),
    Video(Vec<u32>),
}

/// Captioner answering from the script; every call is logged.
pub struct ScriptedCaptioner {
    scene: ScriptedScene,
    log: Mutex<Vec<CaptionCall>>,
}

impl ScriptedCaptioner {
    pub fn new(scene: ScriptedScene) -> Self {
        Self { scene, log: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> Vec<CaptionCall> {
        self.log.lock().unwrap().clone()
    }
}

impl Captioner for ScriptedCaptioner {
    fn model_id(&self) -> String {
        "scripted-captioner".into()
    }

    fn describe_instance(&self, t: u32, _frame: &RgbImage, mask: &Bitmap) -> AdapterResult<String> {
        self.log.lock().unwrap().push(CaptionCall::Instance(t));
        Ok(self.scene.identify(t, mask).map(|o| o.caption.clone()).unwrap_or_default())
    }

    fn describe_scene(&self, t: u32, _frame: &RgbImage) -> AdapterResult<String> {
        self.log.lock().unwrap().push(CaptionCall::Scene(t));
        Ok(self.scene.scene_caption.clone())
    }

    fn describe_video(&self, keyframes: &[(u32, &RgbImage)]) -> AdapterResult<String> {
        self.log
            .lock()
            .unwrap()
            .push(CaptionCall::Video(keyframes.iter().map(|(t, _)| *t).collect()));
        Ok(self.scene.video_caption.clone())
    }
}

/// Wraps a segmenter and fails once when asked about frame `fail_at`.
pub struct FailingSegmenter {
    inner: Arc<dyn Segmenter>,
    fail_at: u32,
    armed: AtomicBool,
}

impl FailingSegmenter {
    pub fn new(inner: Arc<dyn Segmenter>, fail_at: u32) -> Self {
        Self { inner, fail_at, armed: AtomicBool::new(true) }
    }

    fn trip(&self, t: u32) -> AdapterResult<()> {
        if t == self.fail_at && self.armed.swap(false, Ordering::SeqCst) {
            return Err(format!("induced failure at frame {t}"));
        }
        Ok(())
    }
}

impl Segmenter for FailingSegmenter {
    fn model_id(&self) -> String {
        self.inner.model_id()
    }

    fn segment(&self, t: u32, frame: &RgbImage) -> AdapterResult<Vec<Detection>> {
        self.trip(t)?;
        self.inner.segment(t, frame)
    }

    fn propagate(&self, t: u32, frame: &RgbImage, memory: &TrackMemory) -> AdapterResult<BTreeMap<String, Bitmap>> {
        self.trip(t)?;
        self.inner.propagate(t, frame, memory)
    }
}
