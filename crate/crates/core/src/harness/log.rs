use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

/// JSON-lines event log. The only place wall-clock time is written.
pub struct RunLog {
    command: String,
    sink: Mutex<Option<BufWriter<File>>>,
}

impl RunLog {
    /// Appends to `path`, creating parent directories.
    pub fn open(path: &Path, command: &str) -> std::io::Result<Self> {
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { command: command.into(), sink: Mutex::new(Some(BufWriter::new(file))) })
    }

    /// A log that drops everything, for dry runs.
    pub fn disabled(command: &str) -> Self {
        Self { command: command.into(), sink: Mutex::new(None) }
    }

    pub fn event(&self, level: &str, event: &str, fields: Value) {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let mut line = json!({"ts": ts, "level": level, "command": self.command, "event": event});
        if let (Some(obj), Value::Object(extra)) = (line.as_object_mut(), fields) {
            obj.extend(extra);
        }
        match level {
            "warn" => log::warn!("{event}: {line}"),
            "error" => log::error!("{event}: {line}"),
            _ => log::info!("{event}: {line}"),
        }
        let mut sink = self.sink.lock().expect("log lock");
        if let Some(w) = sink.as_mut() {
            let _ = writeln!(w, "{line}");
            let _ = w.flush();
        }
    }

    pub fn info(&self, event: &str, fields: Value) {
        self.event("info", event, fields);
    }

    pub fn warn(&self, event: &str, fields: Value) {
        self.event("warn", event, fields);
    }
}
