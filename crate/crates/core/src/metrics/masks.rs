use crate::dtcore::{decode_rle, Bitmap, MaskSequence};

use super::MetricError;

pub const BOUNDARY_TOLERANCE: f64 = 0.008;

/// Per-frame `(gt, pred)` unions over the ground-truth frames. Missing
/// prediction frames count as empty; masks must share one resolution.
pub fn frame_unions(gt: &MaskSequence, pred: &MaskSequence) -> Result<Vec<(Bitmap, Bitmap)>, MetricError> {
    if let Some(t) = pred.keys().find(|t| !gt.contains_key(t)) {
        return Err(MetricError::Shape(format!("prediction has frame {t} which the ground truth lacks")));
    }
    let mut size: Option<(u32, u32)> = None;
    for m in gt.values().chain(pred.values()).flatten() {
        m.check()?;
        let s = (m.height(), m.width());
        match size {
            None => size = Some(s),
            Some(prev) if prev != s => {
                return Err(MetricError::Shape(format!(
                    "mask resolution {}x{} differs from {}x{}",
                    s.0, s.1, prev.0, prev.1
                )))
            }
            Some(_) => {}
        }
    }
    let (h, w) = size.map_or((0, 0), |(h, w)| (h as usize, w as usize));
    let union = |masks: Option<&Vec<_>>| -> Result<Bitmap, MetricError> {
        let mut out = Bitmap::new(h, w);
        for m in masks.into_iter().flatten() {
            out.or_assign(&decode_rle(m)?);
        }
        Ok(out)
    };
    gt.iter()
        .map(|(t, g)| Ok((union(Some(g))?, union(pred.get(t))?)))
        .collect()
}

fn mean_or_one(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// Mean per-frame IoU, skipping frames where both masks are empty.
pub fn jaccard(gt: &MaskSequence, pred: &MaskSequence) -> Result<f64, MetricError> {
    let frames = frame_unions(gt, pred)?;
    Ok(mean_or_one(frames.iter().filter_map(|(g, p)| g.iou(p))))
}

/// Foreground pixels with a 4-neighbour that is background or off the image.
pub fn boundary(mask: &Bitmap) -> Bitmap {
    let (h, w) = (mask.height(), mask.width());
    Bitmap::from_fn(h, w, |y, x| {
        mask.get(y, x)
            && (y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1))
    })
}

fn disk(radius: f64) -> Vec<(i64, i64)> {
    let r = radius.floor() as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Boundary pixels of `a` lying within the disk around some boundary pixel of `b`.
fn matched(a: &Bitmap, b: &Bitmap, offsets: &[(i64, i64)]) -> usize {
    let (h, w) = (b.height() as i64, b.width() as i64);
    a.pixels()
        .filter(|&(y, x)| {
            offsets.iter().any(|&(dy, dx)| {
                let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                yy >= 0 && xx >= 0 && yy < h && xx < w && b.get(yy as usize, xx as usize)
            })
        })
        .count()
}

/// Contour F-measure of one frame, `None` when both boundaries are empty.
pub fn frame_boundary_f(gt: &Bitmap, pred: &Bitmap, tolerance_fraction: f64) -> Option<f64> {
    let (bg, bp) = (boundary(gt), boundary(pred));
    let (ng, np) = (bg.area(), bp.area());
    if ng == 0 && np == 0 {
        return None;
    }
    if ng == 0 || np == 0 {
        return Some(0.0);
    }
    let diag = ((gt.height() * gt.height() + gt.width() * gt.width()) as f64).sqrt();
    let offsets = disk(tolerance_fraction * diag);
    let precision = matched(&bp, &bg, &offsets) as f64 / np as f64;
    let recall = matched(&bg, &bp, &offsets) as f64 / ng as f64;
    if precision + recall == 0.0 {
        Some(0.0)
    } else {
        Some(2.0 * precision * recall / (precision + recall))
    }
}

/// Mean contour F over frames where either boundary is non-empty.
pub fn boundary_f(gt: &MaskSequence, pred: &MaskSequence, tolerance_fraction: f64) -> Result<f64, MetricError> {
    let frames = frame_unions(gt, pred)?;
    Ok(mean_or_one(
        frames.iter().filter_map(|(g, p)| frame_boundary_f(g, p, tolerance_fraction)),
    ))
}

pub fn jf_mean(j: f64, f: f64) -> f64 {
    (j + f) / 2.0
}
