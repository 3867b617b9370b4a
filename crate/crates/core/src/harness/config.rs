use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchgen::GenerationConfig;
use crate::metrics::MetricConfig;
use crate::modelio::{SamplingParams, TranscriptMode, DEFAULT_TEMPERATURE, DEFAULT_TOP_P};
use crate::perception::PerceptionConfig;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub videos: PathBuf,
    pub output: PathBuf,
    pub registry: PathBuf,
    /// Directory of prompt overrides, one `<group>/<name>.txt` per template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub dataset_id: String,
    pub n_candidates: usize,
    pub downsample_d: u32,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self {
            dataset_id: "rvt".into(),
            n_candidates: crate::treegen::DEFAULT_CANDIDATES,
            downsample_d: 2,
            model: "gpt-4o".into(),
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens: 1024,
            seed: None,
        }
    }
}

impl GenerationSection {
    pub fn params(&self) -> SamplingParams {
        SamplingParams { temperature: self.temperature, top_p: self.top_p, max_tokens: self.max_tokens, seed: self.seed }
    }

    pub fn benchgen(&self) -> GenerationConfig {
        GenerationConfig { n_candidates: self.n_candidates, downsample_d: self.downsample_d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmBackend {
    /// OpenAI-compatible chat and embedding API.
    Http,
    /// Built-in rule-based model for the synthetic fixture.
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub backend: LlmBackend,
    pub api_base: Option<String>,
    pub api_key: Option<String>,
    /// `hash` for the offline hashing embedder, otherwise an embedding model name.
    pub embedder: String,
    pub embed_dim: usize,
    pub max_in_flight: usize,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            backend: LlmBackend::Http,
            api_base: None,
            api_key: None,
            embedder: "hash".into(),
            embed_dim: 256,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub transcript_mode: TranscriptMode,
    pub transcript: Option<PathBuf>,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { transcript_mode: TranscriptMode::Record, transcript: None, workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub perception: PerceptionConfig,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub metrics: MetricConfig,
    #[serde(default)]
    pub run: RunSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub mode: Option<TranscriptMode>,
    pub workers: Option<usize>,
}

/// Replaces `${VAR}` and `${VAR:-default}`; unset variables without a default are errors.
pub fn interpolate_env(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or("unterminated ${ in config")?;
        let expr = &after[..end];
        let (name, default) = match expr.split_once(":-") {
            Some((n, d)) => (n, Some(d)),
            None => (expr, None),
        };
        match lookup(name).or(default.map(str::to_string)) {
            Some(v) => out.push_str(&v),
            None => return Err(format!("environment variable {name} is not set")),
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses `path`, resolves relative paths against its directory and applies `overrides`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(vec![format!("cannot read config {}: {e}", path.display())]))?;
        let text = interpolate_env(&text, |k| std::env::var(k).ok())
            .map_err(|e| HarnessError::Validation(vec![e]))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Validation(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.videos = resolve(base, &cfg.paths.videos);
        cfg.paths.output = resolve(base, &cfg.paths.output);
        cfg.paths.registry = resolve(base, &cfg.paths.registry);
        cfg.paths.prompts = cfg.paths.prompts.as_deref().map(|p| resolve(base, p));
        cfg.run.transcript = cfg.run.transcript.as_deref().map(|p| resolve(base, p));
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.output {
            self.paths.output = out.clone();
        }
        if let Some(t) = &o.transcript {
            self.run.transcript = Some(t.clone());
        }
        if let Some(m) = o.mode {
            self.run.transcript_mode = m;
        }
        if let Some(w) = o.workers {
            self.run.workers = w;
        }
    }

    /// Every problem with the configuration, so they can be reported together.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.paths.videos.is_dir() {
            out.push(format!("videos directory {} does not exist", self.paths.videos.display()));
        }
        if !self.paths.registry.is_file() {
            out.push(format!("registry {} does not exist", self.paths.registry.display()));
        }
        if let Some(p) = &self.paths.prompts {
            if !p.is_dir() {
                out.push(format!("prompt directory {} does not exist", p.display()));
            }
        }
        if self.run.workers < 1 {
            out.push("run.workers must be at least 1".into());
        }
        if let Err(e) = self.perception.check() {
            out.push(e.to_string());
        }
        if let Err(e) = self.generation.params().check() {
            out.push(e.to_string());
        }
        if self.generation.n_candidates < 1 {
            out.push("generation.n_candidates must be at least 1".into());
        }
        if self.generation.downsample_d < 1 {
            out.push("generation.downsample_d must be at least 1".into());
        }
        if !(self.metrics.boundary_tolerance > 0.0) {
            out.push("metrics.boundary_tolerance must be positive".into());
        }
        if self.llm.backend == LlmBackend::Http
            && self.run.transcript_mode != TranscriptMode::Replay
            && self.llm.api_base.as_deref().is_none_or(str::is_empty)
        {
            out.push("llm.api_base is required for the http backend".into());
        }
        if self.llm.embedder == "hash" && self.llm.embed_dim == 0 {
            out.push("llm.embed_dim must be positive".into());
        }
        out
    }

    /// The settings that determine outputs: everything except where things are
    /// written, how transcripts are handled and the worker count.
    pub fn identity(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["paths"].as_object_mut().map(|p| p.remove("output"));
        v["llm"].as_object_mut().map(|l| l.remove("api_key"));
        v.as_object_mut().map(|o| o.remove("run"));
        v
    }

    /// `hash(config identity + input checksums)`, 16 hex digits.
    pub fn run_id(&self, input_checksums: &[String]) -> String {
        let mut h = Sha256::new();
        h.update(self.identity().to_string().as_bytes());
        for c in input_checksums {
            h.update(b"\n");
            h.update(c.as_bytes());
        }
        hex::encode(h.finalize())[..16].to_string()
    }
}
