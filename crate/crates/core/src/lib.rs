//! Toolkit for reasoning visual tasks over video.
//!
//! The crate is organised as a pipeline:
//!
//! * [`dtcore`] holds the digital-twin data model, mask encoding, benchmark
//!   sample types and their validation.
//! * [`modelio`] wraps chat and embedding services behind record/replay
//!   transcripts so every model call can be re-run deterministically.
//! * [`perception`] turns a frame sequence into a [`dtcore::DigitalTwin`]
//!   using pluggable perception adapters.
//! * [`treegen`] and [`benchgen`] pick target objects, build reasoning trees
//!   and emit benchmark samples at four difficulty levels.
//! * [`metrics`] scores predictions and lays the results out per task,
//!   reasoning category and level.
//! * [`agent`] is the zero-shot plan-and-execute baseline.
//! * [`harness`] wires everything to configuration, on-disk layout and the
//!   `rvt` command line.

pub mod agent;
pub mod benchgen;
pub mod dtcore;
pub mod fixture;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod modelio;
pub mod perception;
pub mod prompts;
pub mod text;
pub mod treegen;

#[cfg(test)]
mod test_http;
