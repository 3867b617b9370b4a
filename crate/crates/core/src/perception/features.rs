use image::RgbImage;

use super::{AdapterResult, FeatureExtractor, PerceptionError};
use crate::dtcore::{Bitmap, VisualFeatures};

/// Histogram, block-matching motion and gradient-energy texture computed on the CPU.
#[derive(Debug, Clone, Copy)]
pub struct ClassicalFeatures {
    pub search_radius: u32,
}

impl Default for ClassicalFeatures {
    fn default() -> Self {
        Self { search_radius: 8 }
    }
}

impl FeatureExtractor for ClassicalFeatures {
    fn model_id(&self) -> String {
        format!("classical-r{}", self.search_radius)
    }

    fn extract(&self, frame: &RgbImage, mask: &Bitmap, previous: Option<&RgbImage>) -> AdapterResult<VisualFeatures> {
        extract_visual_features(frame, mask, previous, self.search_radius).map_err(|e| e.to_string())
    }
}

fn color_histogram(frame: &RgbImage, mask: &Bitmap) -> [[f64; 8]; 3] {
    let mut hist = [[0.0; 8]; 3];
    let mut n = 0usize;
    for (y, x) in mask.pixels() {
        let p = frame.get_pixel(x as u32, y as u32).0;
        for c in 0..3 {
            hist[c][(p[c] / 32) as usize] += 1.0;
        }
        n += 1;
    }
    for channel in hist.iter_mut() {
        for b in channel.iter_mut() {
            *b /= n as f64;
        }
    }
    hist
}

/// Displacement `(dx, dy)` minimizing the mean absolute RGB difference between
/// the masked pixels and the previous frame shifted back by the displacement.
/// Ties go to the shorter displacement, then to the smaller `(dy, dx)`.
fn block_match(frame: &RgbImage, mask: &Bitmap, previous: &RgbImage, radius: i64) -> [f64; 2] {
    let (w, h) = (previous.width() as i64, previous.height() as i64);
    let pixels: Vec<(i64, i64, [u8; 3])> = mask
        .pixels()
        .map(|(y, x)| (x as i64, y as i64, frame.get_pixel(x as u32, y as u32).0))
        .collect();
    let mut best: Option<(f64, i64, i64, i64)> = None;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (mut sad, mut count) = (0u64, 0usize);
            for &(x, y, c) in &pixels {
                let (px, py) = (x - dx, y - dy);
                if px < 0 || py < 0 || px >= w || py >= h {
                    continue;
                }
                let q = previous.get_pixel(px as u32, py as u32).0;
                sad += (0..3).map(|i| (c[i] as i64 - q[i] as i64).unsigned_abs()).sum::<u64>();
                count += 1;
            }
            if count * 2 < pixels.len() || count == 0 {
                continue;
            }
            let cost = sad as f64 / count as f64;
            let key = (cost, dx * dx + dy * dy, dy, dx);
            let better = match best {
                None => true,
                Some(b) => key.0 < b.0 || (key.0 == b.0 && (key.1, key.2, key.3) < (b.1, b.2, b.3)),
            };
            if better {
                best = Some(key);
            }
        }
    }
    best.map_or([0.0, 0.0], |(_, _, dy, dx)| [dx as f64, dy as f64])
}

fn gray(frame: &RgbImage, x: i64, y: i64) -> f64 {
    let x = x.clamp(0, frame.width() as i64 - 1) as u32;
    let y = y.clamp(0, frame.height() as i64 - 1) as u32;
    let p = frame.get_pixel(x, y).0;
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// Mean of `gx² + gy²` over the mask, central differences with replicated borders.
fn gradient_energy(frame: &RgbImage, mask: &Bitmap) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (y, x) in mask.pixels() {
        let (x, y) = (x as i64, y as i64);
        let gx = (gray(frame, x + 1, y) - gray(frame, x - 1, y)) / 2.0;
        let gy = (gray(frame, x, y + 1) - gray(frame, x, y - 1)) / 2.0;
        sum += gx * gx + gy * gy;
        n += 1;
    }
    sum / n as f64
}

pub fn extract_visual_features(
    frame: &RgbImage,
    mask: &Bitmap,
    previous: Option<&RgbImage>,
    search_radius: u32,
) -> Result<VisualFeatures, PerceptionError> {
    if mask.is_empty() {
        return Err(PerceptionError::DegenerateMask("features need a non-empty mask".into()));
    }
    if mask.height() != frame.height() as usize || mask.width() != frame.width() as usize {
        return Err(PerceptionError::Config("mask and frame sizes differ".into()));
    }
    let motion = match previous {
        Some(prev) if prev.dimensions() == frame.dimensions() => {
            block_match(frame, mask, prev, search_radius as i64)
        }
        Some(_) => return Err(PerceptionError::Config("previous frame size differs".into())),
        None => [0.0, 0.0],
    };
    Ok(VisualFeatures {
        color_histogram: color_histogram(frame, mask),
        motion,
        texture: gradient_energy(frame, mask),
    })
}
