use serde::{Deserialize, Serialize};

use super::PerceptionError;
use crate::dtcore::{Bitmap, DepthStats};

/// Dense per-pixel depth, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self, PerceptionError> {
        if values.len() != height * width {
            return Err(PerceptionError::Config(format!(
                "depth map has {} values, expected {}x{}",
                values.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn constant(height: usize, width: usize, v: f32) -> Self {
        Self { height, width, values: vec![v; height * width] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Min-max rescaling to `[0, 255]`. A flat map is only clamped into range.
    pub fn normalized(&self) -> DepthMap {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let values = if !(hi > lo) {
            self.values.iter().map(|v| v.clamp(0.0, 255.0)).collect()
        } else {
            let scale = 255.0 / (hi - lo);
            self.values.iter().map(|v| (v - lo) * scale).collect()
        };
        DepthMap { height: self.height, width: self.width, values }
    }
}

/// Population mean and standard deviation of `depth` over the mask pixels.
pub fn compute_depth_stats(depth: &DepthMap, mask: &Bitmap) -> Result<DepthStats, PerceptionError> {
    if depth.height != mask.height() || depth.width != mask.width() {
        return Err(PerceptionError::Config(format!(
            "depth map {}x{} does not match mask {}x{}",
            depth.height,
            depth.width,
            mask.height(),
            mask.width()
        )));
    }
    let values: Vec<f64> = mask
        .pixels()
        .map(|(y, x)| depth.get(y, x) as f64)
        .collect();
    if values.is_empty() {
        return Err(PerceptionError::DegenerateMask(
            "depth statistics need a non-empty mask".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(DepthStats { mean, std: var.sqrt() })
}
