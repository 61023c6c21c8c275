//! Synthetic text-attributed graphs: a stochastic block model whose node
//! texts are drawn from per-community vocabulary blocks.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TagGraph;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Words per community vocabulary block.
    pub block_size: usize,
    pub tokens_mean: usize,
    /// Token counts are uniform in `tokens_mean ± tokens_jitter`.
    pub tokens_jitter: usize,
    /// Words per sentence.
    pub sentence_len: usize,
    /// Fraction of tokens drawn from the global vocabulary.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            nodes: 500,
            communities: 4,
            p_in: 0.05,
            p_out: 0.002,
            block_size: 40,
            tokens_mean: 40,
            tokens_jitter: 8,
            sentence_len: 8,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::config(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.communities < 2 {
            return Err(Error::config("communities must be >= 2"));
        }
        if self.nodes < self.communities {
            return Err(Error::config("nodes must be >= communities"));
        }
        if self.block_size == 0 || self.sentence_len == 0 || self.tokens_mean == 0 {
            return Err(Error::config("block_size, sentence_len and tokens_mean must be positive"));
        }
        if self.tokens_jitter >= self.tokens_mean {
            return Err(Error::config("tokens_jitter must be below tokens_mean"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::config("noise must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn community(&self, v: usize) -> usize {
        v % self.communities
    }

    /// Community that owns `word`, if it is a generated word.
    pub fn word_community(&self, word: &str) -> Option<usize> {
        let k: usize = word.strip_prefix('w')?.parse().ok()?;
        (k < self.block_size * self.communities).then(|| k / self.block_size)
    }
}

fn word(k: usize) -> String {
    format!("w{k}")
}

pub fn generate(spec: &SynthSpec) -> Result<TagGraph> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::Synth);
    let n = spec.nodes;
    let vocab = spec.block_size * spec.communities;

    let mut texts = Vec::with_capacity(n);
    for v in 0..n {
        let c = spec.community(v);
        let len = rng.gen_range(spec.tokens_mean - spec.tokens_jitter..=spec.tokens_mean + spec.tokens_jitter);
        let words: Vec<String> = (0..len)
            .map(|_| {
                let k = if rng.gen::<f64>() < spec.noise {
                    rng.gen_range(0..vocab)
                } else {
                    c * spec.block_size + rng.gen_range(0..spec.block_size)
                };
                word(k)
            })
            .collect();
        let sentences: Vec<String> = words
            .chunks(spec.sentence_len)
            .map(|s| format!("{}.", s.join(" ")))
            .collect();
        texts.push(sentences.join(" "));
    }

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if spec.community(u) == spec.community(v) { spec.p_in } else { spec.p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    TagGraph::new(texts, &edges)
}
