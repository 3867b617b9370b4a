use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtcore::{round2, GroundTruth, ReasoningCategory, RvtSample, TaskType};
use crate::modelio::Embedder;
use crate::text::normalize_tokens;

use super::{
    bertscore, bleu4, boundary_f, ciou, grounding_score, jaccard, rouge_l, CiderCorpus, GroundingScore, MetricError,
    PredictionSet, BOUNDARY_TOLERANCE,
};

pub const METRIC_NAMES: [(TaskType, &[&str]); 4] = [
    (TaskType::Segmentation, &["J", "F", "J&F"]),
    (TaskType::Grounding, &["cIoU", "gIoU", "AP@50"]),
    (TaskType::Vqa, &["BLEU-4", "ROUGE-L", "BERTScore", "CIDEr"]),
    (TaskType::Summary, &["BLEU-4", "ROUGE-L", "BERTScore", "CIDEr"]),
];

const NOTES: [&str; 3] = [
    "AP@50 is the fraction of frames whose best-matched box reaches IoU 0.5; predictions are not ranked by confidence.",
    "gIoU is the mean per-frame IoU, not generalized IoU; cIoU sums intersections and unions over every frame of a cell.",
    "Samples with several reasoning categories count toward each of their category columns.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub boundary_tolerance: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { boundary_tolerance: BOUNDARY_TOLERANCE }
    }
}

/// Raw per-sample scores in `[0, 1]` (CIDEr unbounded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleScore {
    Mask { j: f64, f: f64 },
    Grounding(GroundingScore),
    Text { bleu4: f64, rouge_l: f64, bertscore: f64, cider: f64 },
}

/// One table cell. `category` and `level` are `None` in marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub task: TaskType,
    pub category: Option<ReasoningCategory>,
    pub level: Option<u8>,
    pub count: usize,
    pub missing: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub embedder: String,
    pub boundary_tolerance: f64,
    pub notes: Vec<String>,
    pub cells: Vec<Cell>,
    pub warnings: Vec<String>,
}

fn score_sample(
    sample: &RvtSample,
    prediction: Option<&GroundTruth>,
    config: &MetricConfig,
    corpus: Option<&CiderCorpus>,
    embedder: &dyn Embedder,
) -> Result<SampleScore, MetricError> {
    let ctx = |e: MetricError| match e {
        MetricError::Shape(m) => MetricError::Shape(format!("{}: {m}", sample.sample_id)),
        MetricError::Validation(m) => MetricError::Validation(format!("{}: {m}", sample.sample_id)),
        other => other,
    };
    Ok(match (&sample.ground_truth, prediction) {
        (GroundTruth::MaskSequence(_), None) => SampleScore::Mask { j: 0.0, f: 0.0 },
        (GroundTruth::MaskSequence(g), Some(GroundTruth::MaskSequence(p))) => SampleScore::Mask {
            j: jaccard(g, p).map_err(ctx)?,
            f: boundary_f(g, p, config.boundary_tolerance).map_err(ctx)?,
        },
        (GroundTruth::BoxSequence(g), None) => SampleScore::Grounding(GroundingScore::missing(g)),
        (GroundTruth::BoxSequence(g), Some(GroundTruth::BoxSequence(p))) => {
            SampleScore::Grounding(grounding_score(g, p, None).map_err(ctx)?)
        }
        (GroundTruth::Text(_), None) => SampleScore::Text { bleu4: 0.0, rouge_l: 0.0, bertscore: 0.0, cider: 0.0 },
        (GroundTruth::Text(r), Some(GroundTruth::Text(c))) => SampleScore::Text {
            bleu4: bleu4(c, &[r])?,
            rouge_l: rouge_l(c, r)?,
            bertscore: bertscore(c, r, embedder)?,
            cider: corpus.expect("corpus built for text samples").score(c, r)?,
        },
        _ => return Err(MetricError::VariantMismatch(vec![sample.sample_id.clone()])),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pct(x: f64) -> f64 {
    round2(100.0 * x)
}

fn cell_metrics(task: TaskType, scores: &[SampleScore]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    match task {
        TaskType::Segmentation => {
            let (js, fs): (Vec<f64>, Vec<f64>) = scores
                .iter()
                .filter_map(|s| match s {
                    SampleScore::Mask { j, f } => Some((*j, *f)),
                    _ => None,
                })
                .unzip();
            let (j, f) = (pct(mean(&js)), pct(mean(&fs)));
            out.insert("J".into(), j);
            out.insert("F".into(), f);
            out.insert("J&F".into(), round2((j + f) / 2.0));
        }
        TaskType::Grounding => {
            let g: Vec<GroundingScore> = scores
                .iter()
                .filter_map(|s| match s {
                    SampleScore::Grounding(g) => Some(*g),
                    _ => None,
                })
                .collect();
            out.insert("cIoU".into(), pct(ciou(&g)));
            out.insert("gIoU".into(), pct(mean(&g.iter().map(|s| s.giou).collect::<Vec<_>>())));
            out.insert("AP@50".into(), pct(mean(&g.iter().map(|s| s.ap50).collect::<Vec<_>>())));
        }
        TaskType::Vqa | TaskType::Summary => {
            let mut cols: [Vec<f64>; 4] = Default::default();
            for s in scores {
                if let SampleScore::Text { bleu4, rouge_l, bertscore, cider } = s {
                    for (c, v) in cols.iter_mut().zip([bleu4, rouge_l, bertscore, cider]) {
                        c.push(*v);
                    }
                }
            }
            for (name, c) in ["BLEU-4", "ROUGE-L", "BERTScore", "CIDEr"].iter().zip(&cols) {
                out.insert(name.to_string(), pct(mean(c)));
            }
        }
    }
    out
}

/// Scores every sample and groups the results into report cells. Samples
/// without a prediction score zero and are counted as missing.
pub fn evaluate_run(
    samples: &[RvtSample],
    predictions: &PredictionSet,
    config: &MetricConfig,
    embedder: &dyn Embedder,
) -> Result<EvalReport, MetricError> {
    let mut sorted: Vec<&RvtSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].sample_id == w[1].sample_id) {
        return Err(MetricError::Validation(format!("duplicate sample id {}", w[0].sample_id)));
    }
    let known: BTreeSet<&str> = sorted.iter().map(|s| s.sample_id.as_str()).collect();
    let unknown: Vec<String> =
        predictions.predictions.keys().filter(|k| !known.contains(k.as_str())).cloned().collect();
    if !unknown.is_empty() {
        return Err(MetricError::UnknownSamples(unknown));
    }
    let mismatched: Vec<String> = sorted
        .iter()
        .filter(|s| predictions.predictions.get(&s.sample_id).is_some_and(|p| !p.matches_task(s.task)))
        .map(|s| s.sample_id.clone())
        .collect();
    if !mismatched.is_empty() {
        return Err(MetricError::VariantMismatch(mismatched));
    }

    let refs: Vec<&str> = sorted.iter().filter_map(|s| s.ground_truth.as_text()).collect();
    let corpus = if refs.is_empty() { None } else { Some(CiderCorpus::new(&refs)?) };

    let scores: Vec<SampleScore> = sorted
        .par_iter()
        .map(|s| score_sample(s, predictions.predictions.get(&s.sample_id), config, corpus.as_ref(), embedder))
        .collect::<Result<_, _>>()?;

    let mut warnings = Vec::new();
    for s in &sorted {
        match predictions.predictions.get(&s.sample_id) {
            None => warnings.push(format!("{}: no prediction, scored 0", s.sample_id)),
            Some(GroundTruth::Text(t)) if normalize_tokens(t).is_empty() => {
                warnings.push(format!("{}: empty text prediction, scored 0", s.sample_id))
            }
            _ => {}
        }
    }

    type Key = (TaskType, Option<ReasoningCategory>, Option<u8>);
    let mut groups: BTreeMap<Key, (Vec<SampleScore>, usize)> = BTreeMap::new();
    for (s, score) in sorted.iter().zip(&scores) {
        let missing = usize::from(!predictions.predictions.contains_key(&s.sample_id));
        let mut keys: Vec<Key> = vec![(s.task, None, None)];
        for c in &s.categories {
            keys.push((s.task, Some(*c), Some(s.level)));
            keys.push((s.task, Some(*c), None));
        }
        for k in keys {
            let g = groups.entry(k).or_default();
            g.0.push(*score);
            g.1 += missing;
        }
    }
    let cells = groups
        .into_iter()
        .map(|((task, category, level), (scores, missing))| Cell {
            task,
            category,
            level,
            count: scores.len(),
            missing,
            metrics: cell_metrics(task, &scores),
        })
        .collect();

    Ok(EvalReport {
        model: predictions.model.clone(),
        embedder: embedder.id(),
        boundary_tolerance: config.boundary_tolerance,
        notes: NOTES.iter().map(|s| s.to_string()).collect(),
        cells,
        warnings,
    })
}

impl EvalReport {
    pub fn cell(&self, task: TaskType, category: Option<ReasoningCategory>, level: Option<u8>) -> Option<&Cell> {
        self.cells.iter().find(|c| c.task == task && c.category == category && c.level == level)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One block per task: metric rows, columns semantic/spatial/temporal ×
    /// L1–L4 plus per-category and overall marginals. Absent cells show `-`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model: {}  embedder: {}", self.model, self.embedder);
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        let columns: Vec<(Option<ReasoningCategory>, Option<u8>)> = ReasoningCategory::ALL
            .iter()
            .flat_map(|c| [1, 2, 3, 4].map(|l| (Some(*c), Some(l))).into_iter().chain([(Some(*c), None)]))
            .chain([(None, None)])
            .collect();
        for (task, names) in METRIC_NAMES {
            let Some(total) = self.cell(task, None, None) else { continue };
            let _ = writeln!(out, "\n{task} ({} samples, {} missing)", total.count, total.missing);
            let mut header = format!("{:<10}", "");
            for c in ReasoningCategory::ALL {
                let _ = write!(header, "| {:<39}", c.as_str());
            }
            let _ = writeln!(out, "{header}| overall");
            let mut sub = format!("{:<10}", "metric");
            for _ in ReasoningCategory::ALL {
                let _ = write!(sub, "| {:>7}{:>7}{:>7}{:>7}{:>11} ", "L1", "L2", "L3", "L4", "all");
            }
            let _ = writeln!(out, "{sub}| {:>7}", "all");
            for name in names {
                let mut row = format!("{name:<10}");
                for (i, (c, l)) in columns.iter().enumerate() {
                    if i % 5 == 0 {
                        row.push_str("| ");
                    }
                    let width = if l.is_some() { 7 } else { 11 };
                    let v = self
                        .cell(task, *c, *l)
                        .and_then(|cell| cell.metrics.get(*name))
                        .map_or("-".to_string(), |v| format!("{v:.2}"));
                    let _ = write!(row, "{v:>width$}");
                    if l.is_none() && c.is_some() {
                        row.push(' ');
                    }
                }
                let _ = writeln!(out, "{row}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtcore::{encode_rle, Bitmap, BoxXywh};
    use crate::modelio::HashEmbedder;
    use serde_json::json;

    fn sample(id: &str, task: TaskType, level: u8, cats: &[ReasoningCategory], gt: GroundTruth) -> RvtSample {
        RvtSample {
            sample_id: id.into(),
            video_id: "v".into(),
            task,
            query: "q".into(),
            categories: cats.iter().copied().collect(),
            level,
            ground_truth: gt,
            target_instance_id: "obj_001".into(),
            subtree_ref: json!({}),
        }
    }

    fn masks(f: impl Fn(usize, usize) -> bool) -> GroundTruth {
        GroundTruth::MaskSequence([(1, vec![encode_rle(&Bitmap::from_fn(8, 8, f)).unwrap()])].into())
    }

    use ReasoningCategory::*;

    #[test]
    fn multi_category_sample_fills_both_cells() {
        let s = sample("a", TaskType::Segmentation, 2, &[Semantic, Spatial], masks(|y, _| y < 3));
        let mut p = PredictionSet::new("m");
        p.predictions.insert("a".into(), s.ground_truth.clone());
        let r = evaluate_run(&[s], &p, &MetricConfig::default(), &HashEmbedder::new(8)).unwrap();
        for c in [Semantic, Spatial] {
            let cell = r.cell(TaskType::Segmentation, Some(c), Some(2)).unwrap();
            assert_eq!(cell.metrics["J"], 100.0);
            assert_eq!(cell.metrics["J&F"], 100.0);
        }
        assert!(r.cell(TaskType::Segmentation, Some(Temporal), Some(2)).is_none());
        assert!(r.cell(TaskType::Segmentation, Some(Semantic), Some(1)).is_none());
    }

    #[test]
    fn missing_predictions_score_zero() {
        let samples = vec![
            sample("a", TaskType::Segmentation, 1, &[Semantic], masks(|y, _| y < 3)),
            sample("b", TaskType::Vqa, 1, &[Temporal], GroundTruth::Text("it walks away".into())),
            sample(
                "c",
                TaskType::Grounding,
                3,
                &[Spatial],
                GroundTruth::BoxSequence([(1, vec![BoxXywh::new(0.0, 0.0, 2.0, 2.0)])].into()),
            ),
        ];
        let r = evaluate_run(&samples, &PredictionSet::new("none"), &MetricConfig::default(), &HashEmbedder::new(8))
            .unwrap();
        assert_eq!(r.warnings.len(), 3);
        for c in &r.cells {
            assert_eq!(c.missing, c.count);
            assert!(c.metrics.values().all(|v| *v == 0.0), "{c:?}");
        }
        let table = r.to_table();
        assert!(table.contains("AP@50") && table.contains("BLEU-4"));
    }

    #[test]
    fn variant_and_unknown_ids_are_rejected() {
        let s = sample("a", TaskType::Vqa, 1, &[Semantic], GroundTruth::Text("yes".into()));
        let mut p = PredictionSet::new("m");
        p.predictions.insert("a".into(), GroundTruth::BoxSequence(BTreeMap::new()));
        let e = evaluate_run(std::slice::from_ref(&s), &p, &MetricConfig::default(), &HashEmbedder::new(8)).unwrap_err();
        assert!(matches!(e, MetricError::VariantMismatch(ids) if ids == ["a"]));
        let mut p = PredictionSet::new("m");
        p.predictions.insert("zzz".into(), GroundTruth::Text("yes".into()));
        let e = evaluate_run(&[s], &p, &MetricConfig::default(), &HashEmbedder::new(8)).unwrap_err();
        assert!(matches!(e, MetricError::UnknownSamples(_)));
    }

    #[test]
    fn jf_is_mean_of_rounded_columns() {
        let scores = [SampleScore::Mask { j: 0.1077, f: 0.0721 }];
        let m = cell_metrics(TaskType::Segmentation, &scores);
        assert_eq!((m["J"], m["F"], m["J&F"]), (10.77, 7.21, 8.99));
    }
}
