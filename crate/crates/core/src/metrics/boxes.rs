use serde::{Deserialize, Serialize};

use crate::dtcore::{BoxSequence, BoxXywh};

use super::MetricError;

/// One frame after greedy one-to-one matching by descending IoU.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    pub pairs: Vec<(usize, usize, f64)>,
    pub intersection: f64,
    /// Matched unions plus the areas of every unmatched box.
    pub union: f64,
    pub unmatched: usize,
}

impl FrameMatch {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.unmatched == 0
    }

    /// Matched IoUs averaged over matched pairs and unmatched boxes.
    pub fn mean_iou(&self) -> f64 {
        let n = self.pairs.len() + self.unmatched;
        if n == 0 {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.2).sum::<f64>() / n as f64
    }

    pub fn best_iou(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).fold(0.0, f64::max)
    }
}

pub fn match_boxes(gt: &[BoxXywh], pred: &[BoxXywh]) -> FrameMatch {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, g) in gt.iter().enumerate() {
        for (j, p) in pred.iter().enumerate() {
            let iou = g.iou(p);
            if iou > 0.0 {
                candidates.push((iou, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_g, mut used_p) = (vec![false; gt.len()], vec![false; pred.len()]);
    let mut out = FrameMatch { pairs: Vec::new(), intersection: 0.0, union: 0.0, unmatched: 0 };
    for (iou, i, j) in candidates {
        if used_g[i] || used_p[j] {
            continue;
        }
        used_g[i] = true;
        used_p[j] = true;
        let inter = gt[i].intersection(&pred[j]);
        out.intersection += inter;
        out.union += gt[i].area() + pred[j].area() - inter;
        out.pairs.push((i, j, iou));
    }
    let rest = gt
        .iter()
        .zip(&used_g)
        .chain(pred.iter().zip(&used_p))
        .filter(|(_, used)| !**used);
    for (b, _) in rest {
        out.union += b.area();
        out.unmatched += 1;
    }
    out
}

/// Per-sample grounding accumulators. `intersection`/`union` feed the
/// cumulative IoU of a whole cell; `giou` and `ap50` are already per-sample
/// means over frames holding at least one box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    pub intersection: f64,
    pub union: f64,
    pub giou: f64,
    pub ap50: f64,
    pub frames: usize,
}

impl GroundingScore {
    /// Score of a sample with no usable prediction.
    pub fn missing(gt: &BoxSequence) -> Self {
        let union = gt.values().flatten().map(BoxXywh::area).sum();
        Self { intersection: 0.0, union, giou: 0.0, ap50: 0.0, frames: gt.len() }
    }
}

pub fn grounding_score(
    gt: &BoxSequence,
    pred: &BoxSequence,
    resolution: Option<[u32; 2]>,
) -> Result<GroundingScore, MetricError> {
    if let Some(t) = pred.keys().find(|t| !gt.contains_key(t)) {
        return Err(MetricError::Shape(format!("prediction has frame {t} which the ground truth lacks")));
    }
    for (t, b) in gt.iter().chain(pred.iter()).flat_map(|(t, bs)| bs.iter().map(move |b| (t, b))) {
        if let Some(problem) = b.check(resolution) {
            return Err(MetricError::Validation(format!("frame {t}: {problem}")));
        }
    }
    let none = Vec::new();
    let (mut inter, mut union, mut giou, mut hits, mut frames) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for (t, g) in gt {
        let m = match_boxes(g, pred.get(t).unwrap_or(&none));
        if m.is_empty() {
            continue;
        }
        inter += m.intersection;
        union += m.union;
        giou += m.mean_iou();
        if m.best_iou() >= 0.5 {
            hits += 1;
        }
        frames += 1;
    }
    let (giou, ap50) = if frames == 0 { (1.0, 1.0) } else { (giou / frames as f64, hits as f64 / frames as f64) };
    Ok(GroundingScore { intersection: inter, union, giou, ap50, frames })
}

/// Cumulative IoU: summed intersections over summed unions.
pub fn ciou(scores: &[GroundingScore]) -> f64 {
    let (i, u) = scores.iter().fold((0.0, 0.0), |(i, u), s| (i + s.intersection, u + s.union));
    if u == 0.0 {
        1.0
    } else {
        i / u
    }
}

/// Mean per-frame IoU, averaged over samples.
pub fn giou(scores: &[GroundingScore]) -> f64 {
    mean(scores.iter().map(|s| s.giou))
}

/// Fraction of frames whose best match reaches IoU 0.5, averaged over samples.
pub fn ap50(scores: &[GroundingScore]) -> f64 {
    mean(scores.iter().map(|s| s.ap50))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoxXywh {
        BoxXywh::new(x, y, w, h)
    }

    #[test]
    fn cumulative_and_mean_differ() {
        let gt: BoxSequence = [(1, vec![b(0.0, 0.0, 2.0, 2.0)]), (2, vec![b(0.0, 0.0, 2.0, 2.0)])].into();
        let pred: BoxSequence = [(1, vec![b(0.0, 0.0, 2.0, 2.0)]), (2, vec![b(0.0, 0.0, 2.0, 6.0)])].into();
        let s = grounding_score(&gt, &pred, None).unwrap();
        assert_eq!((s.intersection, s.union), (8.0, 16.0));
        assert!((s.giou - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ciou(&[s]), 0.5);
        assert_eq!(s.ap50, 0.5);
    }

    #[test]
    fn perfect_boxes() {
        let gt: BoxSequence = [(1, vec![b(1.0, 1.0, 3.0, 3.0), b(5.0, 5.0, 2.0, 2.0)])].into();
        let s = grounding_score(&gt, &gt, Some([10, 10])).unwrap();
        assert_eq!((ciou(&[s]), s.giou, s.ap50), (1.0, 1.0, 1.0));
    }

    #[test]
    fn greedy_matching_is_one_to_one() {
        let g = [b(0.0, 0.0, 4.0, 4.0), b(10.0, 0.0, 4.0, 4.0)];
        let p = [b(0.0, 0.0, 4.0, 4.0), b(1.0, 0.0, 4.0, 4.0)];
        let m = match_boxes(&g, &p);
        assert_eq!(m.pairs, vec![(0, 0, 1.0)]);
        assert_eq!(m.unmatched, 2);
        assert!((m.mean_iou() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.union, 16.0 + 16.0 + 16.0);
    }

    #[test]
    fn threshold_fraction() {
        // IoUs 0.6 and 0.4 on two frames
        let gt: BoxSequence = [(1, vec![b(0.0, 0.0, 10.0, 6.0)]), (2, vec![b(0.0, 0.0, 10.0, 4.0)])].into();
        let pred: BoxSequence = [(1, vec![b(0.0, 0.0, 10.0, 10.0)]), (2, vec![b(0.0, 0.0, 10.0, 10.0)])].into();
        let s = grounding_score(&gt, &pred, None).unwrap();
        assert_eq!(s.ap50, 0.5);
    }

    #[test]
    fn out_of_frame_box_is_rejected() {
        let gt: BoxSequence = [(1, vec![b(0.0, 0.0, 2.0, 2.0)])].into();
        let pred: BoxSequence = [(1, vec![b(8.0, 8.0, 4.0, 4.0)])].into();
        assert!(matches!(grounding_score(&gt, &pred, Some([10, 10])), Err(MetricError::Validation(_))));
    }
}
