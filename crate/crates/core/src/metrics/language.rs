use std::collections::{BTreeMap, HashMap};

use crate::modelio::{cosine, Embedder};
use crate::text::normalize_tokens;

use super::MetricError;

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;

type Gram = Vec<String>;

fn ngrams(tokens: &[String], n: usize) -> HashMap<Gram, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

fn reference_tokens(reference: &str) -> Result<Vec<String>, MetricError> {
    let t = normalize_tokens(reference);
    if t.is_empty() {
        Err(MetricError::EmptyReference)
    } else {
        Ok(t)
    }
}

/// BLEU-4 against one or more references. Orders 2..4 use add-one
/// smoothing; the brevity penalty uses the closest reference length.
pub fn bleu4(candidate: &str, references: &[&str]) -> Result<f64, MetricError> {
    if references.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let refs = references.iter().map(|r| reference_tokens(r)).collect::<Result<Vec<_>, _>>()?;
    let cand = normalize_tokens(candidate);
    if cand.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let counts = ngrams(&cand, n);
        let mut max_ref: HashMap<&Gram, usize> = HashMap::new();
        let ref_counts: Vec<_> = refs.iter().map(|r| ngrams(r, n)).collect();
        for rc in &ref_counts {
            for (g, k) in rc {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(*k);
            }
        }
        let hits: usize = counts.iter().map(|(g, k)| (*k).min(*max_ref.get(g).unwrap_or(&0))).sum();
        let total: usize = counts.values().sum();
        let p = if n == 1 {
            if hits == 0 {
                return Ok(0.0);
            }
            hits as f64 / total as f64
        } else {
            (hits + 1) as f64 / (total + 1) as f64
        };
        log_sum += p.ln() / 4.0;
    }
    let c = cand.len();
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("at least one reference");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * log_sum.exp())
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> Result<f64, MetricError> {
    let r = reference_tokens(reference)?;
    let c = normalize_tokens(candidate);
    let m = lcs(&c, &r);
    if m == 0 {
        return Ok(0.0);
    }
    let (p, rec) = (m as f64 / c.len() as f64, m as f64 / r.len() as f64);
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok((1.0 + b2) * p * rec / (rec + b2 * p))
}

/// Document frequencies of the reference corpus, the only state CIDEr-D needs.
#[derive(Debug, Clone)]
pub struct CiderCorpus {
    doc_freq: HashMap<Gram, usize>,
    log_docs: f64,
}

impl CiderCorpus {
    /// One reference text per sample.
    pub fn new(references: &[&str]) -> Result<Self, MetricError> {
        if references.is_empty() {
            return Err(MetricError::EmptyReference);
        }
        let mut doc_freq = HashMap::new();
        for r in references {
            let toks = reference_tokens(r)?;
            for n in 1..=4 {
                for g in ngrams(&toks, n).into_keys() {
                    *doc_freq.entry(g).or_insert(0) += 1;
                }
            }
        }
        Ok(Self { doc_freq, log_docs: (references.len() as f64).ln() })
    }

    fn vectors(&self, tokens: &[String]) -> Vec<BTreeMap<Gram, f64>> {
        (1..=4)
            .map(|n| {
                ngrams(tokens, n)
                    .into_iter()
                    .map(|(g, k)| {
                        let df = self.doc_freq.get(&g).copied().unwrap_or(0).max(1) as f64;
                        (g, k as f64 * (self.log_docs - df.ln()))
                    })
                    .collect()
            })
            .collect()
    }

    /// CIDEr-D of `candidate` against a single reference, scaled by 10.
    pub fn score(&self, candidate: &str, reference: &str) -> Result<f64, MetricError> {
        let r = reference_tokens(reference)?;
        let c = normalize_tokens(candidate);
        if c.is_empty() {
            return Ok(0.0);
        }
        let (vc, vr) = (self.vectors(&c), self.vectors(&r));
        let delta = c.len() as f64 - r.len() as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut total = 0.0;
        for (a, b) in vc.iter().zip(&vr) {
            let norm = |v: &BTreeMap<Gram, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
            let (na, nb) = (norm(a), norm(b));
            let mut val: f64 = a
                .iter()
                .filter_map(|(g, x)| b.get(g).map(|y| x.min(*y) * y))
                .sum();
            if na != 0.0 && nb != 0.0 {
                val /= na * nb;
            }
            total += val * penalty;
        }
        Ok(total / 4.0 * 10.0)
    }
}

/// Greedy token matching F1 on per-token embeddings, no baseline rescaling.
pub fn bertscore(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<f64, MetricError> {
    let r = reference_tokens(reference)?;
    let c = normalize_tokens(candidate);
    if c.is_empty() {
        return Ok(0.0);
    }
    let ec = embedder.embed(&c)?;
    let er = embedder.embed(&r)?;
    let sims: Vec<Vec<f64>> = ec.iter().map(|x| er.iter().map(|y| cosine(x, y)).collect()).collect();
    let precision = sims.iter().map(|row| row.iter().copied().fold(f64::MIN, f64::max)).sum::<f64>() / c.len() as f64;
    let recall = (0..r.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(f64::MIN, f64::max))
        .sum::<f64>()
        / r.len() as f64;
    if precision + recall <= 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}
