//! Brute-force reference computations shared by the oracle tests and the
//! acceptance runner. Everything here works on plain grids and sets so it
//! shares no code with the library.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rvt_core::dtcore::{encode_rle, Bitmap, BoxXywh, MaskSequence};
use rvt_core::treegen::{ReasoningEdge, ReasoningNode, ReasoningTree};
use rvt_core::dtcore::ReasoningCategory;

#[derive(Debug, Clone)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub px: Vec<bool>,
}

impl Grid {
    pub fn at(&self, y: i64, x: i64) -> bool {
        y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w && self.px[y as usize * self.w + x as usize]
    }

    pub fn rect(h: usize, w: usize, y0: usize, x0: usize, rh: usize, rw: usize) -> Self {
        let mut px = vec![false; h * w];
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                px[y * w + x] = true;
            }
        }
        Grid { h, w, px }
    }
}

pub fn sequence(frames: &[&Grid]) -> MaskSequence {
    frames
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let bm = Bitmap::from_rows(g.h, g.w, g.px.clone()).unwrap();
            (i as u32 + 1, vec![encode_rle(&bm).unwrap()])
        })
        .collect()
}

/// `(intersection, union)` pixel counts.
pub fn counts(a: &Grid, b: &Grid) -> (usize, usize) {
    let i = a.px.iter().zip(&b.px).filter(|(x, y)| **x && **y).count();
    let u = a.px.iter().zip(&b.px).filter(|(x, y)| **x || **y).count();
    (i, u)
}

pub fn brute_jaccard(pairs: &[(Grid, Grid)]) -> f64 {
    let ious: Vec<f64> = pairs
        .iter()
        .filter_map(|(g, p)| {
            let (i, u) = counts(g, p);
            (u > 0).then(|| i as f64 / u as f64)
        })
        .collect();
    if ious.is_empty() {
        1.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    }
}

/// Foreground pixels touching background or the image edge (4-neighbourhood).
pub fn brute_boundary(g: &Grid) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for y in 0..g.h as i64 {
        for x in 0..g.w as i64 {
            if !g.at(y, x) {
                continue;
            }
            let edge = y == 0 || x == 0 || y == g.h as i64 - 1 || x == g.w as i64 - 1;
            if edge || [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| !g.at(y + dy, x + dx)) {
                out.push((y, x));
            }
        }
    }
    out
}

/// Contour F by comparing every boundary pixel against every other one.
pub fn brute_frame_f(gt: &Grid, pred: &Grid, tol: f64) -> Option<f64> {
    let (bg, bp) = (brute_boundary(gt), brute_boundary(pred));
    if bg.is_empty() && bp.is_empty() {
        return None;
    }
    if bg.is_empty() || bp.is_empty() {
        return Some(0.0);
    }
    let r = tol * ((gt.h * gt.h + gt.w * gt.w) as f64).sqrt();
    let near = |a: &(i64, i64), set: &[(i64, i64)]| {
        set.iter().any(|b| (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)) as f64).sqrt() <= r)
    };
    let p = bp.iter().filter(|a| near(a, &bg)).count() as f64 / bp.len() as f64;
    let rc = bg.iter().filter(|a| near(a, &bp)).count() as f64 / bg.len() as f64;
    Some(if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) })
}

pub fn brute_f(pairs: &[(Grid, Grid)], tol: f64) -> f64 {
    let fs: Vec<f64> = pairs.iter().filter_map(|(g, p)| brute_frame_f(g, p, tol)).collect();
    if fs.is_empty() {
        1.0
    } else {
        fs.iter().sum::<f64>() / fs.len() as f64
    }
}

/// Integer box as `(x, y, w, h)`.
pub type IBox = (u32, u32, u32, u32);

pub fn to_box(b: IBox) -> BoxXywh {
    BoxXywh { x: b.0 as f64, y: b.1 as f64, w: b.2 as f64, h: b.3 as f64, score: None }
}

pub fn raster(b: IBox, h: usize, w: usize) -> Grid {
    Grid::rect(h, w, b.1 as usize, b.0 as usize, b.3 as usize, b.2 as usize)
}

/// Per-frame `(intersection, union)` by pixel counting, single box per side.
pub fn box_counts(gt: Option<IBox>, pred: Option<IBox>, h: usize, w: usize) -> (usize, usize) {
    let empty = Grid { h, w, px: vec![false; h * w] };
    let g = gt.map_or(empty.clone(), |b| raster(b, h, w));
    let p = pred.map_or(empty, |b| raster(b, h, w));
    counts(&g, &p)
}

/// Nodes within `level` hops of `root`, by repeated frontier expansion.
pub fn reachable_within(root: &str, edges: &[(String, String)], level: u32) -> BTreeSet<String> {
    let mut seen = BTreeSet::from([root.to_string()]);
    for _ in 0..level {
        let next: Vec<String> =
            edges.iter().filter(|(f, _)| seen.contains(f)).map(|(_, t)| t.clone()).collect();
        seen.extend(next);
    }
    seen
}

/// A DAG over `n` nodes (edges only from lower to higher index) rooted at `n0`.
pub fn dag(n: usize, pairs: &[(usize, usize)]) -> ReasoningTree {
    let nodes = (0..n)
        .map(|i| ReasoningNode { node_id: format!("n{i}"), entity: format!("e{i}"), attributes: vec![], is_root: i == 0 })
        .collect();
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for &(a, b) in pairs {
        let (a, b) = (a.min(b) % n, a.max(b) % n);
        if a != b && seen.insert((a, b)) {
            edges.push(ReasoningEdge {
                from: format!("n{a}"),
                to: format!("n{b}"),
                kind: ReasoningCategory::Semantic,
                relation: "rel".into(),
                timestamps: vec![],
            });
        }
    }
    ReasoningTree { nodes, edges, root_id: "n0".into(), depth: 4 }
}

/// Integer depth values keep the sums exact.
pub fn exact_mean_std(values: &[u32]) -> (f64, f64) {
    let n = values.len() as i128;
    let s: i128 = values.iter().map(|v| *v as i128).sum();
    let ss: i128 = values.iter().map(|v| (*v as i128) * (*v as i128)).sum();
    let var = (n * ss - s * s) as f64 / (n * n) as f64;
    (s as f64 / n as f64, var.sqrt())
}

pub fn mean_of(cells: &BTreeMap<String, f64>) -> f64 {
    cells.values().sum::<f64>() / cells.len() as f64
}

pub mod agent_scene {
    use std::collections::BTreeSet;

    use rvt_core::agent::{Op, OpNode, Plan};
    use rvt_core::dtcore::{DigitalTwin, TaskType};
    use rvt_core::perception::mock::{ScriptedObject, ScriptedScene};
    use rvt_core::perception::{build_digital_twin, KeyframeInterval, PerceptionConfig};

    /// A bear in front of a car for the whole clip and a cub behind the car
    /// from frame 5 on. The answers are obj_001 (bear) and obj_003 (cub).
    pub fn twin() -> DigitalTwin {
        let scene = ScriptedScene::new(24, 32)
            .with(ScriptedObject::new("a brown bear with a thick shaggy coat", [120, 80, 40], 200.0).size(6, 6).at(2.0, 4.0))
            .with(ScriptedObject::new("a red sedan", [200, 20, 20], 100.0).size(8, 5).at(20.0, 12.0))
            .with(ScriptedObject::new("a small black bear cub", [20, 20, 20], 30.0).size(4, 4).at(12.0, 2.0).visible(5, 8));
        let config = PerceptionConfig { keyframe_interval: KeyframeInterval::Fixed(2), ..Default::default() };
        build_digital_twin("synthetic", &scene.frames(8), &config, &scene.adapters().0).unwrap().twin
    }

    pub fn node(id: &str, op: Op, params: &[(&str, &str)], inputs: &[&str]) -> OpNode {
        OpNode {
            node_id: id.into(),
            op,
            params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn three_node() -> Plan {
        Plan::new(
            TaskType::Segmentation,
            vec![
                node("a", Op::SelectInstancesByAttribute, &[("attribute", "shaggy coat")], &[]),
                node("b", Op::FilterByTemporalEvent, &[("event", "present_at"), ("frame", "1")], &["a"]),
                node("m", Op::EmitMasks, &[], &["b"]),
            ],
        )
        .unwrap()
    }

    pub fn spatial() -> Plan {
        Plan::new(
            TaskType::Segmentation,
            vec![
                node("bears", Op::SelectInstancesByAttribute, &[("attribute", "bear")], &[]),
                node("car", Op::SelectInstancesByAttribute, &[("attribute", "red sedan")], &[]),
                node("front", Op::FilterBySpatialRelation, &[("relation", "in_front_of")], &["bears", "car"]),
                node("m", Op::EmitMasks, &[], &["front"]),
            ],
        )
        .unwrap()
    }

    pub fn temporal() -> Plan {
        Plan::new(
            TaskType::Segmentation,
            vec![
                node("bears", Op::SelectInstancesByAttribute, &[("attribute", "bear")], &[]),
                node("late", Op::FilterByTemporalEvent, &[("event", "appears_after"), ("frame", "4")], &["bears"]),
                node("m", Op::EmitMasks, &[], &["late"]),
            ],
        )
        .unwrap()
    }

    pub fn ids(set: &BTreeSet<String>) -> Vec<&str> {
        set.iter().map(String::as_str).collect()
    }
}
