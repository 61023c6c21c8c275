//! Train-free anomaly scores from per-view consistency, over re-batched
//! rounds.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::encoders::{embed_all, Embeddings, Model};
use crate::error::{Error, Result};
use crate::featurizer::FrozenFeatures;
use crate::graph::TagGraph;
use crate::linalg::logsumexp;
use crate::objective::{build_views_with, config_views, ViewSpec};
use crate::rng::{round_stream, Rng};
use crate::trainer::{make_batches, tokenize_graph};

/// `weight · (sⁿ − sᵖ + C)` for row `i` of a view's logits, where `sᵖ` is
/// the diagonal logit, `sⁿ` the mean of the others and `C` the row's
/// InfoNCE term.
pub fn view_score(row: &[f64], i: usize, weight: f64) -> Result<f64> {
    let n = row.len();
    if n < 2 {
        return Err(Error::validation(format!("view_score needs a row of length >= 2, got {n}")));
    }
    if i >= n {
        return Err(Error::validation(format!("anchor index {i} outside row of length {n}")));
    }
    let pos = row[i];
    let neg = (row.iter().sum::<f64>() - pos) / (n - 1) as f64;
    let c = logsumexp(row) - pos;
    Ok(weight * (neg - pos + c))
}

/// Views used for scoring; all-ones weights when `score_uniform_weights`.
pub fn score_views(cfg: &RunConfig) -> Vec<ViewSpec> {
    let mut specs = config_views(cfg);
    if cfg.score_uniform_weights {
        specs.iter_mut().for_each(|s| s.weight = 1.0);
    }
    specs
}

/// One round: every node is scored once inside a random batch of size `n`.
pub fn round_scores(
    emb: &Embeddings,
    specs: &[ViewSpec],
    tau: f64,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let nodes = emb.text_node.matrix.rows();
    let mut out = vec![0.0; nodes];
    for batch in make_batches(nodes, batch_size, rng)? {
        let bundle = build_views_with(&batch, emb, tau, specs)?;
        for (pos, &v) in batch.iter().enumerate() {
            let mut s = 0.0;
            for (spec, logits) in &bundle.views {
                s += view_score(logits.row(pos), pos, spec.weight)?;
            }
            out[v] = s;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: usize,
    pub rounds: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over rounds.
    pub std: f64,
    pub score: f64,
}

/// Combines `per_round[r][v]` into one record per node.
pub fn aggregate(per_round: &[Vec<f64>]) -> Result<Vec<ScoreRecord>> {
    let r = per_round.len();
    if r < 1 {
        return Err(Error::validation("aggregate needs at least one round"));
    }
    let n = per_round[0].len();
    if per_round.iter().any(|s| s.len() != n) {
        return Err(Error::validation("rounds cover different node counts"));
    }
    (0..n)
        .map(|v| {
            let rounds: Vec<f64> = per_round.iter().map(|s| s[v]).collect();
            let mean = rounds.iter().sum::<f64>() / r as f64;
            let var = rounds.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / r as f64;
            let std = var.sqrt();
            let score = mean + std;
            if !score.is_finite() {
                return Err(Error::Numeric(format!("non-finite score for node {v}")));
            }
            Ok(ScoreRecord { id: v, rounds, mean, std, score })
        })
        .collect()
}

/// Scores precomputed embeddings over `rounds` rounds; round `r` batches
/// with the stream derived from `seed ⊕ r`.
pub fn score_embeddings_with<F>(
    emb: &Embeddings,
    cfg: &RunConfig,
    rounds: usize,
    mut on_round: F,
) -> Result<Vec<ScoreRecord>>
where
    F: FnMut(usize),
{
    let specs = score_views(cfg);
    let mut per_round = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let mut rng = round_stream(cfg.seed, r);
        per_round.push(round_scores(emb, &specs, cfg.tau, cfg.score_batch(), &mut rng)?);
        on_round(r);
    }
    aggregate(&per_round)
}

pub fn score_embeddings(emb: &Embeddings, cfg: &RunConfig, rounds: usize) -> Result<Vec<ScoreRecord>> {
    score_embeddings_with(emb, cfg, rounds, |_| {})
}

pub fn embed_graph(model: &Model, graph: &TagGraph, features: &FrozenFeatures, cfg: &RunConfig) -> Result<Embeddings> {
    if features.matrix.shape() != (graph.node_count(), model.shape().feature_dim) {
        return Err(Error::validation(format!(
            "dimension mismatch: features {:?}, expected ({}, {})",
            features.matrix.shape(),
            graph.node_count(),
            model.shape().feature_dim
        )));
    }
    let tokens = tokenize_graph(graph, cfg);
    Ok(embed_all(model, graph, &features.matrix, &tokens, cfg.max_neighbors))
}

/// Full scoring: embed every node once, then run the rounds.
pub fn score(
    model: &Model,
    graph: &TagGraph,
    features: &FrozenFeatures,
    cfg: &RunConfig,
    rounds: usize,
) -> Result<Vec<ScoreRecord>> {
    let emb = embed_graph(model, graph, features, cfg)?;
    score_embeddings(&emb, cfg, rounds)
}

pub fn scores_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from("id,score,mean,std\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.id, r.score, r.mean, r.std));
    }
    out
}

/// Parses `scores.csv` into `(id, score)` pairs.
pub fn parse_scores_csv(text: &str, path: &str) -> Result<Vec<(usize, f64)>> {
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.trim().split(',').collect(),
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let (id_col, score_col) = match (col("id"), col("score")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::parse(path, 1, "header must contain id and score")),
    };
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |c: usize| fields.get(c).map(|s| s.trim()).ok_or_else(|| Error::parse(path, i + 1, "missing column"));
        let id = get(id_col)?
            .parse::<usize>()
            .map_err(|e| Error::parse(path, i + 1, format!("bad id: {e}")))?;
        let score = get(score_col)?
            .parse::<f64>()
            .map_err(|e| Error::parse(path, i + 1, format!("bad score: {e}")))?;
        if !score.is_finite() {
            return Err(Error::parse(path, i + 1, "non-finite score"));
        }
        out.push((id, score));
    }
    Ok(out)
}
