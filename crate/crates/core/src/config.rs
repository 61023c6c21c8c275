//! Run configuration.
//!
//! `config.json` carries exactly the field names of [`RunConfig`]; missing
//! keys take their defaults and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which contrastive views the objective (and the scorer) uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ViewSet {
    /// Four cross-modal views plus the two uni-modal views.
    #[default]
    Full,
    /// The four cross-modal views only.
    Cross,
    /// Cross-modal inner-scale views (node-node and context-context) only.
    CrossInner,
}

/// Anomaly-injection parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InjectionConfig {
    /// Total anomaly budget `4m`; `None` means 4% of the node count rounded
    /// to a multiple of four.
    pub total_anomalies: Option<usize>,
    /// Candidate-set size `K` for dissimilar-source selection.
    pub candidates: usize,
    /// Clique size `q`.
    pub clique_size: usize,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        InjectionConfig {
            total_anomalies: None,
            candidates: 50,
            clique_size: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Softmax temperature.
    pub tau: f64,
    /// Weight of the uni-modal views.
    pub gamma: f64,
    /// Scoring rounds `R`.
    pub rounds: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Shared embedding dimension `d`.
    pub embed_dim: usize,
    pub text_layers: usize,
    pub text_width: usize,
    pub text_heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub graph_layers: usize,
    /// Frozen feature dimension `d_in`.
    pub feature_dim: usize,
    pub seed: u64,
    pub views: ViewSet,
    /// Adds the mirrored (target-anchored) term for every view.
    pub symmetric_views: bool,
    /// Scores every view with weight 1 instead of the loss weights.
    pub score_uniform_weights: bool,
    /// Caps the neighbors averaged by the context readout.
    pub max_neighbors: Option<usize>,
    /// Scoring batch size; `None` reuses `batch_size`.
    pub score_batch_size: Option<usize>,
    pub injection: InjectionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tau: 0.07,
            gamma: 0.01,
            rounds: 256,
            batch_size: 128,
            learning_rate: 2e-4,
            epochs: 2,
            embed_dim: 128,
            text_layers: 2,
            text_width: 64,
            text_heads: 4,
            max_len: 64,
            vocab_size: 8192,
            graph_layers: 2,
            feature_dim: 768,
            seed: 0,
            views: ViewSet::Full,
            symmetric_views: false,
            score_uniform_weights: false,
            max_neighbors: None,
            score_batch_size: None,
            injection: InjectionConfig::default(),
        }
    }
}

/// Per-dataset `(learning_rate, gamma, epochs)` settings reported for the
/// eight benchmark graphs.
pub const DATASET_PRESETS: [(&str, f64, f64, usize); 8] = [
    ("citeseer", 2e-4, 5e-3, 2),
    ("pubmed", 2e-5, 1e-3, 2),
    ("history", 2e-5, 0.5, 2),
    ("photo", 5e-5, 1e-3, 3),
    ("computers", 2e-5, 1e-2, 3),
    ("children", 5e-5, 0.5, 2),
    ("ogbn-arxiv", 1e-5, 1e-2, 2),
    ("citationv8", 2e-5, 0.5, 2),
];

impl RunConfig {
    /// Default configuration with one dataset preset applied.
    pub fn preset(name: &str) -> Option<Self> {
        let key = name.to_ascii_lowercase();
        DATASET_PRESETS
            .iter()
            .find(|(n, ..)| *n == key)
            .map(|&(_, lr, gamma, epochs)| RunConfig {
                learning_rate: lr,
                gamma,
                epochs,
                ..RunConfig::default()
            })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rounds", self.rounds),
            ("embed_dim", self.embed_dim),
            ("text_layers", self.text_layers),
            ("text_width", self.text_width),
            ("text_heads", self.text_heads),
            ("max_len", self.max_len),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and >= 0"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be >= 2"));
        }
        if matches!(self.score_batch_size, Some(n) if n < 2) {
            return Err(Error::config("score_batch_size must be >= 2"));
        }
        if !self.text_width.is_multiple_of(self.text_heads) {
            return Err(Error::config(format!(
                "text_width {} not divisible by text_heads {}",
                self.text_width, self.text_heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::config("vocab_size must be >= 4"));
        }
        if self.max_neighbors == Some(0) {
            return Err(Error::config("max_neighbors must be >= 1"));
        }
        if self.injection.candidates == 0 {
            return Err(Error::config("injection.candidates must be >= 1"));
        }
        if self.injection.clique_size < 2 {
            return Err(Error::config("injection.clique_size must be >= 2"));
        }
        Ok(())
    }

    pub fn score_batch(&self) -> usize {
        self.score_batch_size.unwrap_or(self.batch_size)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(s).map_err(|e| Error::config(format!("config.json: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
