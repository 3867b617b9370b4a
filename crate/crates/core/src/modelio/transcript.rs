use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptMode {
    Record,
    Replay,
    Passthrough,
}

impl FromStr for TranscriptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "passthrough" => Ok(Self::Passthrough),
            other => Err(format!("unknown transcript mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Chat,
    Embed,
}

/// One line of a `transcripts/<run_id>.jsonl` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub request_digest: String,
    pub kind: CallKind,
    pub request: serde_json::Value,
    pub response: serde_json::Value,
    /// Call latency in milliseconds.
    pub wall_time_ms: u64,
}

#[derive(Default)]
struct Inner {
    records: Vec<TranscriptRecord>,
    index: HashMap<String, Vec<usize>>,
    cursors: HashMap<String, usize>,
    sink: Option<BufWriter<File>>,
}

/// Ordered log of model calls. Appends go through a single lock, so concurrent
/// callers are serialized; replay lookups hand out the recorded responses for a
/// digest in recording order.
#[derive(Default)]
pub struct Transcript {
    inner: Mutex<Inner>,
    path: Option<PathBuf>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<TranscriptRecord>) -> Self {
        let t = Self::default();
        {
            let mut inner = t.inner.lock().unwrap();
            for r in records {
                inner.push(r);
            }
        }
        t
    }

    /// Opens an existing transcript for replay.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        let mut t = Self::from_records(records);
        t.path = Some(path.to_path_buf());
        Ok(t)
    }

    /// Creates (truncating) a transcript file that every append is flushed to.
    pub fn create(path: &Path) -> Result<Self, ModelError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = File::create(path)?;
        let t = Self {
            inner: Mutex::new(Inner {
                sink: Some(BufWriter::new(file)),
                ..Inner::default()
            }),
            path: Some(path.to_path_buf()),
        };
        Ok(t)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, record: TranscriptRecord) -> Result<(), ModelError> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(sink) = inner.sink.as_mut() {
            serde_json::to_writer(&mut *sink, &record)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        inner.push(record);
        Ok(())
    }

    /// Next recorded response for `digest`; the last one repeats once exhausted.
    pub fn lookup(&self, digest: &str) -> Option<TranscriptRecord> {
        let mut inner = self.inner.lock().unwrap();
        let positions = inner.index.get(digest)?.clone();
        let cursor = inner.cursors.entry(digest.to_string()).or_insert(0);
        let pos = positions[(*cursor).min(positions.len() - 1)];
        *cursor += 1;
        Some(inner.records[pos].clone())
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.inner.lock().unwrap().index.contains_key(digest)
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.inner.lock().unwrap().records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes all records as JSONL.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Inner {
    fn push(&mut self, record: TranscriptRecord) {
        self.index
            .entry(record.request_digest.clone())
            .or_default()
            .push(self.records.len());
        self.records.push(record);
    }
}
