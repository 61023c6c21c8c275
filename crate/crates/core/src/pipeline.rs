//! End-to-end orchestration: inject, featurize, train, score, evaluate.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::Result;
use crate::evalkit::{evaluate, EvalReport};
use crate::featurizer::{hashed_features, load_external_features, FrozenFeatures};
use crate::graph::{InjectionLabel, TagGraph};
use crate::injector::{run_injection, InjectionPlan, InjectionReport};
use crate::io::{ensure_dir, save_dataset, write_matrix_tsv, write_text, FEATURES_FILE};
use crate::scorer::{embed_graph, score_embeddings_with, scores_csv, ScoreRecord};
use crate::trainer::{loss_log_csv, train_with, TrainState};

/// Frozen features for `graph`: `features.tsv` from `dir` when present,
/// otherwise the hashed fallback.
pub fn featurize(graph: &TagGraph, cfg: &RunConfig, dir: Option<&Path>) -> Result<FrozenFeatures> {
    if let Some(path) = dir.map(|d| d.join(FEATURES_FILE)).filter(|p| p.exists()) {
        return load_external_features(&path, graph);
    }
    Ok(hashed_features(graph, cfg.vocab_size, cfg.feature_dim, cfg.seed))
}

pub fn inject(graph: &TagGraph, cfg: &RunConfig) -> Result<(TagGraph, InjectionLabel, InjectionReport)> {
    let features = hashed_features(graph, cfg.vocab_size, cfg.feature_dim, cfg.seed);
    let plan = InjectionPlan::from_config(cfg, graph.node_count());
    run_injection(graph, &plan, &features.matrix)
}

/// Everything one in-memory run produces.
#[derive(Debug)]
pub struct RunOutputs {
    pub graph: TagGraph,
    pub labels: InjectionLabel,
    pub injection: InjectionReport,
    pub features: FrozenFeatures,
    pub state: TrainState,
    pub scores: Vec<ScoreRecord>,
    pub report: EvalReport,
}

/// Injects anomalies into a clean graph, then trains, scores with
/// `cfg.rounds` rounds and evaluates.
pub fn run_in_memory(clean: &TagGraph, cfg: &RunConfig) -> Result<RunOutputs> {
    let (graph, labels, injection) = inject(clean, cfg)?;
    let features = hashed_features(&graph, cfg.vocab_size, cfg.feature_dim, cfg.seed);
    let state = train_with(&graph, &features, cfg, |_| {})?;
    let emb = embed_graph(&state.model, &graph, &features, cfg)?;
    let scores = score_embeddings_with(&emb, cfg, cfg.rounds, |_| {})?;
    let values: Vec<f64> = scores.iter().map(|r| r.score).collect();
    let report = evaluate(&values, &labels)?;
    Ok(RunOutputs { graph, labels, injection, features, state, scores, report })
}

/// File names written by [`run_pipeline`] inside its output directory.
pub mod artifacts {
    pub const INJECTED_DIR: &str = "injected";
    pub const INJECTION_REPORT: &str = "report.json";
    pub const MODEL: &str = "model.ckpt";
    pub const LOSS_LOG: &str = "loss_log.csv";
    pub const SCORES: &str = "scores.csv";
    pub const REPORT: &str = "report.json";
    pub const ROC: &str = "roc.csv";
    pub const CONFIG: &str = "config.json";
}

/// [`run_in_memory`] on a dataset directory, writing every intermediate
/// artifact under `out_dir`. The data directory is only read.
pub fn run_pipeline(cfg: &RunConfig, clean: &TagGraph, data_dir: &Path, out_dir: &Path, log: &mut dyn FnMut(&str)) -> Result<EvalReport> {
    use artifacts::*;
    ensure_dir(out_dir)?;
    write_text(&out_dir.join(CONFIG), &cfg.to_json())?;

    log("stage inject");
    let (graph, labels, injection) = inject(clean, cfg)?;
    let inj_dir = out_dir.join(INJECTED_DIR);
    save_dataset(&graph, &labels, &inj_dir)?;
    write_text(&inj_dir.join(INJECTION_REPORT), &injection.to_json())?;
    log(&format!("injected label histogram {:?}", labels.histogram()));

    log("stage featurize");
    let features = match featurize(clean, cfg, Some(data_dir))?.provenance {
        crate::featurizer::Provenance::ExternalFile => {
            log("warning: features.tsv describes pre-injection texts; using hashed features of the injected graph");
            hashed_features(&graph, cfg.vocab_size, cfg.feature_dim, cfg.seed)
        }
        crate::featurizer::Provenance::HashedFallback => hashed_features(&graph, cfg.vocab_size, cfg.feature_dim, cfg.seed),
    };
    write_matrix_tsv(features.matrix.iter_rows(), &out_dir.join(FEATURES_FILE))?;

    log("stage train");
    let state = train_with(&graph, &features, cfg, |s| {
        if let Some(last) = s.log.last() {
            log(&format!("epoch {} done, last batch loss {:.6}", s.epoch, last.loss));
        }
    });
    let state = match state {
        Ok(s) => s,
        Err(crate::trainer::TrainError::Diverged { message, last_good }) => {
            checkpoint::save(&out_dir.join(MODEL), cfg, &last_good.model)?;
            write_text(&out_dir.join(LOSS_LOG), &loss_log_csv(&last_good.log))?;
            return Err(crate::error::Error::Numeric(message));
        }
        Err(e) => return Err(e.into()),
    };
    checkpoint::save(&out_dir.join(MODEL), cfg, &state.model)?;
    write_text(&out_dir.join(LOSS_LOG), &loss_log_csv(&state.log))?;

    log(&format!("stage score ({} rounds)", cfg.rounds));
    let emb = embed_graph(&state.model, &graph, &features, cfg)?;
    let scores = score_embeddings_with(&emb, cfg, cfg.rounds, |_| {})?;
    write_text(&out_dir.join(SCORES), &scores_csv(&scores))?;

    log("stage eval");
    let values: Vec<f64> = scores.iter().map(|r| r.score).collect();
    let report = evaluate(&values, &labels)?;
    write_text(&out_dir.join(REPORT), &report.to_json())?;
    write_text(&out_dir.join(ROC), &report.roc_csv())?;
    Ok(report)
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub nodes: usize,
    pub edges: usize,
    pub threads: usize,
    pub featurize_s: f64,
    pub train_epoch_s: Vec<f64>,
    pub embed_s: f64,
    pub score_round_s: Vec<f64>,
    pub score_total_s: f64,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench serializes") + "\n"
    }
}

/// Times featurization, each training epoch and each scoring round on the
/// graph as given.
pub fn bench(graph: &TagGraph, cfg: &RunConfig, data_dir: Option<&Path>) -> Result<BenchReport> {
    let t = Instant::now();
    let features = featurize(graph, cfg, data_dir)?;
    let featurize_s = t.elapsed().as_secs_f64();

    let mut train_epoch_s = Vec::new();
    let mut mark = Instant::now();
    let state = train_with(graph, &features, cfg, |_| {
        train_epoch_s.push(mark.elapsed().as_secs_f64());
        mark = Instant::now();
    })?;

    let t = Instant::now();
    let emb = embed_graph(&state.model, graph, &features, cfg)?;
    let embed_s = t.elapsed().as_secs_f64();

    let mut score_round_s = Vec::new();
    let total = Instant::now();
    let mut mark = Instant::now();
    score_embeddings_with(&emb, cfg, cfg.rounds, |_| {
        score_round_s.push(mark.elapsed().as_secs_f64());
        mark = Instant::now();
    })?;
    Ok(BenchReport {
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        threads: crate::threads(),
        featurize_s,
        train_epoch_s,
        embed_s,
        score_round_s,
        score_total_s: total.elapsed().as_secs_f64(),
    })
}
