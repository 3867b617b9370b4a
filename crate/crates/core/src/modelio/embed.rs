use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{EmbedBackend, EmbedRequest, ModelClient, ModelError};
use crate::text::normalize_tokens;

/// Text embedder used by BERTScore and attribute matching.
pub trait Embedder: Send + Sync {
    /// Identifier reported next to scores computed with this embedder.
    fn id(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ModelError>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Deterministic embedder: each normalized token maps to a hash-seeded vector,
/// texts embed as the normalized sum of their token vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        let mut block = 0u32;
        while out.len() < self.dim {
            let digest = Sha256::digest(format!("{token}\u{0}{block}").as_bytes());
            out.extend(
                digest
                    .iter()
                    .take(self.dim - out.len())
                    .map(|b| (*b as f64 - 127.5) / 127.5),
            );
            block += 1;
        }
        out
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for tok in normalize_tokens(text) {
            for (a, v) in acc.iter_mut().zip(self.token_vector(&tok)) {
                *a += v;
            }
        }
        let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            acc[0] = 1.0;
            return acc;
        }
        acc.into_iter().map(|x| x / n).collect()
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-{}", self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

impl EmbedBackend for HashEmbedder {
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(request.input.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Embedder that goes through a [`ModelClient`], so calls are transcribed.
pub struct ClientEmbedder {
    client: Arc<ModelClient>,
    model: String,
}

impl ClientEmbedder {
    pub fn new(client: Arc<ModelClient>, model: impl Into<String>) -> Self {
        Self { client, model: model.into() }
    }
}

impl Embedder for ClientEmbedder {
    fn id(&self) -> String {
        self.model.clone()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.client.embed(&self.model, texts)
    }
}
