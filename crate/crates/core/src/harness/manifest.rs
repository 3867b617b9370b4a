use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ingest::VideoEntry;
use super::HarnessError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// A file under the output directory with its content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub checksum: String,
    pub video_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Settings that determine the outputs.
    pub config: serde_json::Value,
    /// Capability name to registry adapter id.
    pub adapters: BTreeMap<String, String>,
    /// Capability name to model id, as reported by the adapters.
    pub models: BTreeMap<String, String>,
    pub prompt_version: String,
    /// Transcript file names, relative to `transcripts/` when recorded there.
    pub transcripts: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_id: String,
    pub run_id: String,
    pub videos: Vec<VideoEntry>,
    pub twins: Vec<Artifact>,
    pub shards: Vec<Artifact>,
    pub provenance: Provenance,
}

pub fn file_checksum(path: &Path) -> Result<String, HarnessError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn upsert(list: &mut Vec<Artifact>, a: Artifact) {
    list.retain(|x| x.path != a.path);
    list.push(a);
    list.sort_by(|a, b| a.path.cmp(&b.path));
}

impl Manifest {
    pub fn upsert_video(&mut self, v: VideoEntry) {
        self.videos.retain(|x| x.video_id != v.video_id);
        self.videos.push(v);
        self.videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    }

    /// Records `rel` (relative to `out`) with its current checksum.
    pub fn record_twin(&mut self, out: &Path, rel: &str, video_id: &str) -> Result<(), HarnessError> {
        let a = Artifact {
            path: rel.into(),
            checksum: file_checksum(&out.join(rel))?,
            video_ids: vec![video_id.into()],
            samples: None,
        };
        upsert(&mut self.twins, a);
        Ok(())
    }

    pub fn record_shard(&mut self, out: &Path, rel: &str, video_ids: Vec<String>, samples: usize) -> Result<(), HarnessError> {
        let a = Artifact { path: rel.into(), checksum: file_checksum(&out.join(rel))?, video_ids, samples: Some(samples) };
        upsert(&mut self.shards, a);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn save(&self, out: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(MANIFEST_FILE), self.to_json())?;
        Ok(())
    }

    /// Problems with the manifest against the files under `out`.
    pub fn verify(&self, out: &Path) -> Vec<String> {
        let known: BTreeSet<&str> = self.videos.iter().map(|v| v.video_id.as_str()).collect();
        let mut problems = Vec::new();
        for a in self.twins.iter().chain(&self.shards) {
            match file_checksum(&out.join(&a.path)) {
                Ok(c) if c == a.checksum => {}
                Ok(_) => problems.push(format!("{}: checksum mismatch", a.path)),
                Err(e) => problems.push(format!("{}: {e}", a.path)),
            }
            for v in &a.video_ids {
                if !known.contains(v.as_str()) {
                    problems.push(format!("{}: video {v} is not in the manifest", a.path));
                }
            }
        }
        problems
    }

    /// Reads and verifies `out/manifest.json`.
    pub fn load(out: &Path) -> Result<Self, HarnessError> {
        let path = out.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| HarnessError::Validation(vec![format!("cannot read {}: {e}", path.display())]))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Validation(vec![format!("{}: {e}", path.display())]))?;
        let problems = m.verify(out);
        if problems.is_empty() {
            Ok(m)
        } else {
            Err(HarnessError::Validation(problems))
        }
    }

    /// The manifest at `out` when one exists, else an empty one.
    pub fn load_or_default(out: &Path) -> Result<Self, HarnessError> {
        if out.join(MANIFEST_FILE).exists() {
            Self::load(out)
        } else {
            Ok(Self::default())
        }
    }
}
