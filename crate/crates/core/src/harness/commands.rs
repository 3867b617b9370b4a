use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::agent::{select_for, Agent, Registry};
use crate::benchgen::{compute_dataset_stats, generate_video_samples, load_shard, shard_text, write_shard};
use crate::dtcore::{externalize_masks, load_twin_file, serialize_twin, DigitalTwin, Profile, RvtSample, TaskType};
use crate::fixture::FixtureLlm;
use crate::llm::LlmContext;
use crate::metrics::{evaluate_run, PredictionSet};
use crate::modelio::{
    ClientEmbedder, Embedder, HashEmbedder, HttpBackend, HttpConfig, ModelClient, Transcript, TranscriptMode,
};
use crate::perception::{build_digital_twin, AdapterSet, Capability};
use crate::prompts::PromptSet;

use super::adapters::RegistryFactory;
use super::config::{LlmBackend, RunConfig};
use super::ingest::{ingest_video, list_videos, Video};
use super::log::RunLog;
use super::manifest::{file_checksum, Manifest};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    BuildDt,
    GenBench,
    Eval { predictions: PathBuf },
    Agent { video: String, query: String },
    Stats,
    /// Regenerates every shard from a transcript and checks it against the manifest.
    Replay { transcript: Option<PathBuf> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildDt => "build-dt",
            Command::GenBench => "gen-bench",
            Command::Eval { .. } => "eval",
            Command::Agent { .. } => "agent",
            Command::Stats => "stats",
            Command::Replay { .. } => "replay",
        }
    }

    fn needs_videos(&self) -> bool {
        matches!(self, Command::BuildDt | Command::GenBench | Command::Agent { .. })
    }

    fn needs_manifest(&self) -> bool {
        matches!(self, Command::Eval { .. } | Command::Stats | Command::Replay { .. })
    }

    fn uses_llm(&self) -> bool {
        !matches!(self, Command::Stats)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    /// One line for the terminal.
    pub summary: String,
    pub warnings: Vec<String>,
    pub run_id: String,
}

struct Session<'a> {
    command: &'a Command,
    config: RunConfig,
    out: PathBuf,
    run_id: String,
    videos: Vec<Video>,
    manifest: Manifest,
    registry: Registry,
    log: RunLog,
}

fn sha8(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))[..8].to_string()
}

/// Validates inputs, then runs `command`. With `dry_run` nothing is written.
pub fn run(command: &Command, config: &RunConfig, dry_run: bool) -> Result<Outcome, HarnessError> {
    let mut problems = config.problems();
    let mut config = config.clone();
    if let Command::Replay { transcript: Some(t) } = command {
        config.run.transcript = Some(t.clone());
    }
    if matches!(command, Command::Replay { .. }) {
        config.run.transcript_mode = TranscriptMode::Replay;
    }
    let out = config.paths.output.clone();

    match command {
        Command::Eval { predictions } if !predictions.is_file() => {
            problems.push(format!("predictions file {} does not exist", predictions.display()))
        }
        Command::Agent { query, .. } if query.trim().is_empty() => problems.push("query is empty".into()),
        _ => {}
    }
    let registry = if config.paths.registry.is_file() {
        match Registry::load(&config.paths.registry) {
            Ok(r) => r,
            Err(e) => {
                problems.push(e.to_string());
                Registry::default()
            }
        }
    } else {
        Registry::default()
    };
    if command.needs_videos() && config.paths.registry.is_file() && registry.best(Capability::Segmentation).is_none() {
        problems.push("registry has no segmentation adapter".into());
    }

    let mut videos = Vec::new();
    if command.needs_videos() && config.paths.videos.is_dir() {
        let paths = match command {
            Command::Agent { video, .. } => {
                let p = list_videos(&config.paths.videos)?
                    .into_iter()
                    .find(|p| super::ingest::video_id(p) == *video);
                if p.is_none() {
                    problems.push(format!("video {video} is not under {}", config.paths.videos.display()));
                }
                p.into_iter().collect()
            }
            _ => list_videos(&config.paths.videos)?,
        };
        if paths.is_empty() && !matches!(command, Command::Agent { .. }) {
            problems.push(format!("no videos under {}", config.paths.videos.display()));
        }
        for p in paths {
            match ingest_video(&p) {
                Ok(v) => videos.push(v),
                Err(e) => problems.push(format!("{}: {e}", p.display())),
            }
        }
    }

    let manifest = match Manifest::load_or_default(&out) {
        Ok(m) => m,
        Err(HarnessError::Validation(p)) => {
            problems.extend(p);
            Manifest::default()
        }
        Err(e) => return Err(e),
    };
    if command.needs_manifest() && manifest.shards.is_empty() && problems.is_empty() {
        problems.push(format!("{} lists no shards; run gen-bench first", out.join(super::MANIFEST_FILE).display()));
    }

    let mut checksums: Vec<String> = if command.needs_videos() {
        videos.iter().map(|v| v.entry.checksum.clone()).collect()
    } else {
        manifest.videos.iter().map(|v| v.checksum.clone()).collect()
    };
    if let Command::Eval { predictions } = command {
        if predictions.is_file() {
            checksums.push(file_checksum(predictions)?);
        }
    }
    let run_id = config.run_id(&checksums);

    if command.uses_llm() && config.run.transcript_mode == TranscriptMode::Replay {
        let t = transcript_path(&config, &out, &run_id, command);
        if !t.is_file() {
            problems.push(format!("transcript {} does not exist", t.display()));
        }
    }

    if !problems.is_empty() {
        return Err(HarnessError::Validation(problems));
    }

    if dry_run {
        let what = if command.needs_videos() {
            format!("{} video(s)", videos.len())
        } else {
            format!("{} shard(s)", manifest.shards.len())
        };
        return Ok(Outcome {
            summary: format!("{} dry run: configuration valid, {what}, run {run_id}", command.name()),
            warnings: vec![],
            run_id,
        });
    }

    let log = RunLog::open(&out.join("logs").join(format!("{run_id}.jsonl")), command.name())?;
    log.info("start", json!({"run_id": run_id, "videos": videos.len()}));
    let session = Session { command, config, out, run_id, videos, manifest, registry, log };
    let result = match command {
        Command::BuildDt => session.build_dt(),
        Command::GenBench => session.gen_bench(),
        Command::Eval { predictions } => session.eval(predictions),
        Command::Agent { video, query } => session.agent(video, query),
        Command::Stats => session.stats(),
        Command::Replay { .. } => session.replay(),
    };
    match &result {
        Ok(o) => {
            for w in &o.warnings {
                session.log.warn("warning", json!({"message": w}));
            }
            session.log.info("done", json!({"summary": o.summary}));
        }
        Err(e) => session.log.event("error", "failed", json!({"message": e.to_string(), "exit": e.exit_code()})),
    }
    result
}

fn transcript_path(config: &RunConfig, out: &Path, run_id: &str, command: &Command) -> PathBuf {
    let name = match command {
        Command::Replay { .. } => "gen-bench",
        c => c.name(),
    };
    config
        .run
        .transcript
        .clone()
        .unwrap_or_else(|| out.join("transcripts").join(format!("{run_id}-{name}.jsonl")))
}

impl Session<'_> {
    fn transcript_name(&self) -> Option<String> {
        if self.config.run.transcript_mode == TranscriptMode::Passthrough {
            return None;
        }
        let p = transcript_path(&self.config, &self.out, &self.run_id, self.command);
        Some(
            p.strip_prefix(self.out.join("transcripts"))
                .map(|r| r.display().to_string())
                .unwrap_or_else(|_| p.display().to_string()),
        )
    }

    fn llm(&self) -> Result<Arc<LlmContext>, HarnessError> {
        let mode = self.config.run.transcript_mode;
        let transcript = match mode {
            TranscriptMode::Record => Transcript::create(&transcript_path(&self.config, &self.out, &self.run_id, self.command))?,
            TranscriptMode::Replay => Transcript::load(&transcript_path(&self.config, &self.out, &self.run_id, self.command))?,
            TranscriptMode::Passthrough => Transcript::in_memory(),
        };
        let mut client = ModelClient::new(mode, Arc::new(transcript)).with_max_in_flight(self.config.llm.max_in_flight.max(1));
        if mode != TranscriptMode::Replay {
            client = match self.config.llm.backend {
                LlmBackend::Fixture => client.with_chat(Arc::new(FixtureLlm)),
                LlmBackend::Http => {
                    let mut http = HttpConfig::new(self.config.llm.api_base.clone().unwrap_or_default());
                    http.api_key = self.config.llm.api_key.clone().filter(|k| !k.is_empty());
                    let backend = Arc::new(HttpBackend::new(http)?);
                    client.with_chat(backend.clone()).with_embed(backend)
                }
            };
        }
        let prompts = match &self.config.paths.prompts {
            Some(dir) => PromptSet::with_overrides(dir)?,
            None => PromptSet::default(),
        };
        Ok(Arc::new(
            LlmContext::new(Arc::new(client), self.config.generation.model.clone())
                .with_params(self.config.generation.params())
                .with_prompts(Arc::new(prompts)),
        ))
    }

    fn embedder(&self, llm: &LlmContext) -> Box<dyn Embedder> {
        match self.config.llm.embedder.as_str() {
            "hash" => Box::new(HashEmbedder::new(self.config.llm.embed_dim)),
            model => Box::new(ClientEmbedder::new(llm.client.clone(), model)),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, HarnessError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.run.workers)
            .build()
            .map_err(|e| HarnessError::Fault(e.to_string()))
    }

    fn build_twin(&self, llm: &Arc<LlmContext>, video: &Video) -> Result<(DigitalTwin, AdapterSet, Vec<String>, BTreeMap<String, String>), HarnessError> {
        let caps: BTreeSet<Capability> =
            Capability::ALL.iter().copied().filter(|c| self.registry.best(*c).is_some()).collect();
        let chosen = select_for(&caps, &self.registry)?;
        let factory = RegistryFactory::for_video(llm.clone(), &video.path)?;
        let adapters = crate::agent::AdapterFactory::instantiate(&factory, &chosen)?;
        let built = build_digital_twin(&video.entry.video_id, video, &self.config.perception, &adapters)?;
        let ids = chosen.into_iter().map(|(c, d)| (c.to_string(), d.id)).collect();
        Ok((built.twin, adapters, built.warnings, ids))
    }

    /// Stores `twin` under `twins/` with its masks under `masks/` and records it.
    fn store_twin(&self, manifest: &mut Manifest, twin: &DigitalTwin) -> Result<(), HarnessError> {
        let ext = externalize_masks(twin, &self.out)?;
        let rel = format!("twins/{}.json", twin.metadata.video_id);
        std::fs::create_dir_all(self.out.join("twins"))?;
        std::fs::write(self.out.join(&rel), serialize_twin(&ext, Profile::Storage)?)?;
        manifest.record_twin(&self.out, &rel, &twin.metadata.video_id)
    }

    /// The stored twin when it was built from identical frames, else `None`.
    fn stored_twin(&self, video: &Video) -> Option<DigitalTwin> {
        let entry = self.manifest.videos.iter().find(|v| v.video_id == video.entry.video_id)?;
        if *entry != video.entry {
            return None;
        }
        let rel = format!("twins/{}.json", video.entry.video_id);
        self.manifest.twins.iter().find(|a| a.path == rel)?;
        load_twin_file(&self.out.join(rel), &self.out).ok()
    }

    fn twins(&self, llm: &Arc<LlmContext>, manifest: &mut Manifest, reuse: bool) -> Result<(Vec<DigitalTwin>, Vec<String>), HarnessError> {
        let built: Vec<Result<_, HarnessError>> = self.pool()?.install(|| {
            self.videos
                .par_iter()
                .map(|v| match self.stored_twin(v).filter(|_| reuse) {
                    Some(t) => Ok((t, None)),
                    None => self.build_twin(llm, v).map(|b| (b.0.clone(), Some(b))),
                })
                .collect()
        });
        let mut twins = Vec::new();
        let mut warnings = Vec::new();
        for (video, r) in self.videos.iter().zip(built) {
            let (twin, fresh) = r?;
            manifest.upsert_video(video.entry.clone());
            if let Some((_, adapters, w, ids)) = fresh {
                self.store_twin(manifest, &twin)?;
                manifest.provenance.adapters = ids;
                manifest.provenance.models = adapters.model_ids();
                warnings.extend(w.into_iter().map(|w| format!("{}: {w}", video.entry.video_id)));
            }
            twins.push(twin);
        }
        Ok((twins, warnings))
    }

    fn base_manifest(&self, llm: Option<&LlmContext>) -> Manifest {
        let mut m = self.manifest.clone();
        m.dataset_id = self.config.generation.dataset_id.clone();
        m.run_id = self.run_id.clone();
        m.provenance.config = self.config.identity();
        if let Some(l) = llm {
            m.provenance.prompt_version = l.prompts.version();
        }
        m
    }

    fn build_dt(&self) -> Result<Outcome, HarnessError> {
        let llm = self.llm()?;
        let mut manifest = self.base_manifest(Some(&llm));
        let (twins, warnings) = self.twins(&llm, &mut manifest, false)?;
        if let Some(t) = self.transcript_name().filter(|_| !llm.client.transcript().is_empty()) {
            manifest.provenance.transcripts.insert(t);
        }
        manifest.save(&self.out)?;
        let instances: usize = twins.iter().map(|t| t.instance_ids().len()).sum();
        Ok(Outcome {
            summary: format!("build-dt: {} twin(s), {instances} instance track(s) -> {}", twins.len(), self.out.join("twins").display()),
            warnings,
            run_id: self.run_id.clone(),
        })
    }

    fn generate(&self, llm: &Arc<LlmContext>, twins: &[DigitalTwin]) -> Result<(Vec<Vec<RvtSample>>, Vec<String>), HarnessError> {
        let cfg = self.config.generation.benchgen();
        let results: Vec<_> = self.pool()?.install(|| {
            twins.par_iter().map(|t| generate_video_samples(llm, t, &cfg)).collect()
        });
        let mut shards = Vec::new();
        let mut warnings = Vec::new();
        for (t, r) in twins.iter().zip(results) {
            let r = r?;
            warnings.extend(r.warnings.into_iter().map(|w| format!("{}: {w}", t.metadata.video_id)));
            shards.push(r.samples);
        }
        Ok((shards, warnings))
    }

    fn gen_bench(&self) -> Result<Outcome, HarnessError> {
        let llm = self.llm()?;
        let mut manifest = self.base_manifest(Some(&llm));
        let (twins, mut warnings) = self.twins(&llm, &mut manifest, true)?;
        let (shards, w) = self.generate(&llm, &twins)?;
        warnings.extend(w);
        let mut total = 0;
        let mut tasks = BTreeSet::new();
        let mut levels = BTreeSet::new();
        for (twin, samples) in twins.iter().zip(&shards) {
            let vid = &twin.metadata.video_id;
            let rel = format!("shards/{vid}.jsonl");
            write_shard(samples, &self.out.join(&rel))?;
            manifest.record_shard(&self.out, &rel, vec![vid.clone()], samples.len())?;
            total += samples.len();
            tasks.extend(samples.iter().map(|s| s.task));
            levels.extend(samples.iter().map(|s| s.level));
        }
        if let Some(t) = self.transcript_name() {
            manifest.provenance.transcripts.insert(t);
        }
        manifest.save(&self.out)?;
        Ok(Outcome {
            summary: format!(
                "gen-bench: {total} sample(s) in {} shard(s), {} task type(s), {} level(s)",
                shards.len(),
                tasks.len(),
                levels.len()
            ),
            warnings,
            run_id: self.run_id.clone(),
        })
    }

    fn samples(&self) -> Result<Vec<RvtSample>, HarnessError> {
        let mut out = Vec::new();
        for a in &self.manifest.shards {
            out.extend(load_shard(&self.out.join(&a.path))?);
        }
        Ok(out)
    }

    fn write_report(&self, name: &str, json: &str, table: &str) -> Result<PathBuf, HarnessError> {
        let dir = self.out.join("reports");
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(format!("{name}.json")), json)?;
        std::fs::write(dir.join(format!("{name}.txt")), table)?;
        Ok(dir.join(format!("{name}.json")))
    }

    fn stats(&self) -> Result<Outcome, HarnessError> {
        let samples = self.samples()?;
        let stats = compute_dataset_stats(&samples);
        let json = serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n";
        let path = self.write_report("stats", &json, &stats.to_table())?;
        Ok(Outcome {
            summary: format!(
                "stats: {} queries, {} tokens -> {}",
                stats.totals.queries,
                stats.totals.tokens,
                path.display()
            ),
            warnings: vec![],
            run_id: self.run_id.clone(),
        })
    }

    fn eval(&self, predictions: &Path) -> Result<Outcome, HarnessError> {
        let samples = self.samples()?;
        let preds = PredictionSet::load(predictions)?;
        let llm = self.llm()?;
        let embedder = self.embedder(&llm);
        let report = evaluate_run(&samples, &preds, &self.config.metrics, embedder.as_ref())?;
        let name = format!("eval-{}", self.run_id);
        let path = self.write_report(&name, &report.to_json(), &report.to_table())?;
        let missing: usize = report.cells.iter().filter(|c| c.category.is_none() && c.level.is_none()).map(|c| c.missing).sum();
        Ok(Outcome {
            summary: format!(
                "eval: {} sample(s), {missing} missing prediction(s) scored 0 -> {}",
                samples.len(),
                path.display()
            ),
            warnings: report.warnings.clone(),
            run_id: self.run_id.clone(),
        })
    }

    fn agent(&self, video: &str, query: &str) -> Result<Outcome, HarnessError> {
        let v = self.videos.iter().find(|v| v.entry.video_id == video).expect("validated");
        let llm = self.llm()?;
        let embedder = self.embedder(&llm);
        let factory = RegistryFactory::for_video(llm.clone(), &v.path)?;
        let mut agent = Agent::new(&llm, &self.registry, &factory);
        agent.embedder = Some(embedder.as_ref());
        agent.perception = self.config.perception.clone();
        let run = agent.answer(video, v, query)?;
        let dir = self.out.join("reports").join("agent");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{video}-{}.json", sha8(query)));
        std::fs::write(&path, serde_json::to_string_pretty(&run).expect("run serializes") + "\n")?;
        let answer = match &run.output {
            crate::dtcore::GroundTruth::Text(t) => format!("\"{t}\""),
            crate::dtcore::GroundTruth::MaskSequence(m) => {
                format!("masks over {} frame(s)", m.values().filter(|v| !v.is_empty()).count())
            }
            crate::dtcore::GroundTruth::BoxSequence(b) => {
                format!("boxes over {} frame(s)", b.values().filter(|v| !v.is_empty()).count())
            }
        };
        Ok(Outcome {
            summary: format!("agent: {} plan of {} node(s), {answer} -> {}", task_name(run.plan.task), run.plan.nodes.len(), path.display()),
            warnings: run.warnings,
            run_id: self.run_id.clone(),
        })
    }

    fn replay(&self) -> Result<Outcome, HarnessError> {
        let llm = self.llm()?;
        let mut twins = Vec::new();
        for a in &self.manifest.twins {
            twins.push(load_twin_file(&self.out.join(&a.path), &self.out)?);
        }
        let (shards, warnings) = self.generate(&llm, &twins)?;
        let dir = self.out.join("replay").join("shards");
        std::fs::create_dir_all(&dir)?;
        let mut mismatches = Vec::new();
        let mut matched = 0;
        for (twin, samples) in twins.iter().zip(&shards) {
            let vid = &twin.metadata.video_id;
            let path = dir.join(format!("{vid}.jsonl"));
            std::fs::write(&path, shard_text(samples)?)?;
            let rel = format!("shards/{vid}.jsonl");
            match self.manifest.shards.iter().find(|a| a.path == rel) {
                Some(a) if a.checksum == file_checksum(&path)? => matched += 1,
                Some(_) => mismatches.push(format!("{rel} differs from its replay")),
                None => mismatches.push(format!("{rel} is not in the manifest")),
            }
        }
        if !mismatches.is_empty() {
            return Err(HarnessError::Validation(mismatches));
        }
        Ok(Outcome {
            summary: format!("replay: {matched} shard(s) reproduced byte-identically -> {}", dir.display()),
            warnings,
            run_id: self.run_id.clone(),
        })
    }
}

fn task_name(t: TaskType) -> String {
    serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}
