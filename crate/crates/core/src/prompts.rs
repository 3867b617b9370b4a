//! Versioned prompt templates.
//!
//! Built-in templates live under `prompts/<stage>/<name>.txt` in this crate
//! and are compiled in. A run may point at another directory with the same
//! layout; any file present there replaces the built-in one.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

const BUILTIN: &[(&str, &str)] = &[
    ("perception/instance", include_str!("../prompts/perception/instance.txt")),
    ("perception/scene", include_str!("../prompts/perception/scene.txt")),
    ("perception/video", include_str!("../prompts/perception/video.txt")),
    ("treegen/system", include_str!("../prompts/treegen/system.txt")),
    ("treegen/select_objects", include_str!("../prompts/treegen/select_objects.txt")),
    ("treegen/assign_task", include_str!("../prompts/treegen/assign_task.txt")),
    ("treegen/build_tree", include_str!("../prompts/treegen/build_tree.txt")),
    ("benchgen/query", include_str!("../prompts/benchgen/query.txt")),
    ("benchgen/checklist", include_str!("../prompts/benchgen/checklist.txt")),
    ("benchgen/text_answer", include_str!("../prompts/benchgen/text_answer.txt")),
    ("agent/plan", include_str!("../prompts/agent/plan.txt")),
    ("agent/reason", include_str!("../prompts/agent/reason.txt")),
];

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl PromptSet {
    /// Built-ins overlaid with any `<stage>/<name>.txt` found under `dir`.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        for key in BUILTIN.iter().map(|(k, _)| *k) {
            let path = dir.join(format!("{key}.txt"));
            if path.exists() {
                set.templates.insert(key.to_string(), std::fs::read_to_string(path)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, key: &str) -> &str {
        self.templates
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unknown prompt template {key}"))
    }

    /// Substitutes `{{name}}` placeholders.
    pub fn render(&self, key: &str, vars: &[(&str, &str)]) -> String {
        let mut out = self.get(key).to_string();
        for (name, value) in vars {
            out = out.replace(&format!("{{{{{name}}}}}"), value);
        }
        out
    }

    /// Short content hash of every template, recorded as provenance.
    pub fn version(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.templates {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())[..12].to_string()
    }
}

/// Text between `<tag>` and `</tag>`, trimmed.
pub fn section<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = start + text[start..].find(&close)?;
    Some(text[start..end].trim())
}
