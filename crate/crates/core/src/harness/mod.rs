//! Configuration, video ingestion, output layout and the pipeline commands.
//!
//! Output layout under the configured directory:
//!
//! ```text
//! twins/<video>.json          storage-profile twins, masks external
//! masks/<video>/<inst>/<t>.rle
//! shards/<video>.jsonl        benchmark samples
//! transcripts/<run_id>-<command>.jsonl
//! reports/                    stats, evaluation reports, agent runs
//! logs/<run_id>.jsonl         structured logs, the only timestamped files
//! manifest.json
//! ```

mod adapters;
mod commands;
mod config;
mod ingest;
mod log;
mod manifest;

use crate::agent::AgentError;
use crate::benchgen::BenchError;
use crate::dtcore::DtError;
use crate::metrics::MetricError;
use crate::modelio::ModelError;
use crate::perception::PerceptionError;

pub use adapters::RegistryFactory;
pub use commands::{run, Command, Outcome};
pub use config::{
    interpolate_env, GenerationSection, LlmBackend, LlmSection, Overrides, PathsConfig, RunConfig, RunSection,
};
pub use ingest::{ingest_video, list_videos, video_id, Video, VideoEntry};
pub use log::RunLog;
pub use manifest::{file_checksum, Artifact, Manifest, Provenance, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_FAULT: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error("{0}")]
    Fault(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) | HarnessError::Ingest(_) => EXIT_VALIDATION,
            HarnessError::Fault(_) | HarnessError::Io(_) => EXIT_FAULT,
        }
    }
}

impl From<BenchError> for HarnessError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Invalid(_) | BenchError::Shard { .. } => HarnessError::Validation(vec![e.to_string()]),
            other => HarnessError::Fault(other.to_string()),
        }
    }
}

impl From<MetricError> for HarnessError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::VariantMismatch(_)
            | MetricError::UnknownSamples(_)
            | MetricError::Parse { .. }
            | MetricError::Validation(_)
            | MetricError::EmptyReference => HarnessError::Validation(vec![e.to_string()]),
            other => HarnessError::Fault(other.to_string()),
        }
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::MissingCapability(_) | AgentError::Registry(_) => HarnessError::Validation(vec![e.to_string()]),
            other => HarnessError::Fault(other.to_string()),
        }
    }
}

impl From<PerceptionError> for HarnessError {
    fn from(e: PerceptionError) -> Self {
        HarnessError::Fault(e.to_string())
    }
}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        HarnessError::Fault(e.to_string())
    }
}

impl From<DtError> for HarnessError {
    fn from(e: DtError) -> Self {
        HarnessError::Fault(e.to_string())
    }
}
