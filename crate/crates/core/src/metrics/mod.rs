//! Evaluation metrics and the task × category × level report.
//!
//! Mask metrics follow the video-object-segmentation protocol (region
//! Jaccard, contour F with a 0.008·diagonal tolerance). Grounding reports
//! cumulative IoU, mean per-frame IoU and a thresholded per-frame AP@50.
//! Text tasks use BLEU-4, ROUGE-L, CIDEr-D and an embedding BERTScore on
//! normalized tokens.

mod boxes;
mod language;
mod masks;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dtcore::{DtError, GroundTruth};
use crate::modelio::ModelError;

pub use boxes::{ap50, ciou, giou, grounding_score, match_boxes, FrameMatch, GroundingScore};
pub use language::{bertscore, bleu4, rouge_l, CiderCorpus, CIDER_SIGMA, ROUGE_BETA};
pub use masks::{boundary, boundary_f, frame_boundary_f, frame_unions, jaccard, jf_mean, BOUNDARY_TOLERANCE};
pub use report::{evaluate_run, Cell, EvalReport, MetricConfig, SampleScore, METRIC_NAMES};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("reference text is empty")]
    EmptyReference,
    #[error("prediction kind does not match the task for samples: {}", .0.join(", "))]
    VariantMismatch(Vec<String>),
    #[error("predictions for unknown samples: {}", .0.join(", "))]
    UnknownSamples(Vec<String>),
    #[error(transparent)]
    Mask(#[from] DtError),
    #[error(transparent)]
    Embedding(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// Predictions of one model run, keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    pub model: String,
    pub timestamp: Option<String>,
    pub predictions: BTreeMap<String, GroundTruth>,
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    sample_id: String,
    prediction: GroundTruth,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamp: Option<String>,
}

impl PredictionSet {
    pub fn new(model: impl Into<String>) -> Self {
        Self { model: model.into(), ..Default::default() }
    }

    /// JSONL: an optional `{"model", "timestamp"}` header line, then one
    /// `{"sample_id", "prediction"}` object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&HeaderLine { model: self.model.clone(), timestamp: self.timestamp.clone() })
            .expect("header serializes");
        out.push('\n');
        for (id, p) in &self.predictions {
            let line = PredictionLine { sample_id: id.clone(), prediction: p.clone() };
            out.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), MetricError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::File::create(path)?.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut out = PredictionSet::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |e: serde_json::Error| MetricError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            };
            let value: serde_json::Value = serde_json::from_str(&line).map_err(err)?;
            if value.get("sample_id").is_none() {
                let h: HeaderLine = serde_json::from_value(value).map_err(err)?;
                out.model = h.model;
                out.timestamp = h.timestamp;
                continue;
            }
            let p: PredictionLine = serde_json::from_value(value).map_err(err)?;
            if out.predictions.insert(p.sample_id.clone(), p.prediction).is_some() {
                return Err(MetricError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("duplicate prediction for {}", p.sample_id),
                });
            }
        }
        Ok(out)
    }
}
