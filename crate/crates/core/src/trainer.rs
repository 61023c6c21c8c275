//! Mini-batch training of both encoders and the finite-difference checker.
//!
//! Each batch only evaluates the encoders on its receptive field: the text
//! encoder on the batch plus the neighbors its readout averages, the GCN on
//! that set plus its `graph_layers`-hop closure. The results equal a
//! full-graph forward pass restricted to the batch.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::config::RunConfig;
use crate::encoders::{readout_neighbors, readout_operator, GcnPlan, Model, ModelShape};
use crate::error::{Error, Result};
use crate::featurizer::{tokenize, FrozenFeatures, TokenSequence};
use crate::graph::TagGraph;
use crate::linalg::Matrix;
use crate::objective::{config_views, tape_joint_loss, TapeTables, ViewSpec};
use crate::rng::{stream, Rng, Stream};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Shuffles `0..n` into batches of `batch_size`; a trailing batch of one
/// node is merged into the batch before it.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if n < 2 {
        return Err(Error::validation(format!("need at least 2 nodes to batch, got {n}")));
    }
    if batch_size < 2 {
        return Err(Error::config("batch_size must be >= 2"));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = ids.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    Ok(batches)
}

pub fn tokenize_graph(graph: &TagGraph, cfg: &RunConfig) -> Vec<TokenSequence> {
    graph
        .texts()
        .iter()
        .map(|t| tokenize(t, cfg.vocab_size, cfg.max_len))
        .collect()
}

/// Inputs shared by every batch of a run.
pub struct TrainData<'a> {
    pub graph: &'a TagGraph,
    pub features: &'a Matrix,
    pub tokens: Vec<TokenSequence>,
}

impl<'a> TrainData<'a> {
    pub fn new(graph: &'a TagGraph, features: &'a FrozenFeatures, cfg: &RunConfig) -> Result<Self> {
        if features.matrix.rows() != graph.node_count() {
            return Err(Error::validation(format!(
                "dimension mismatch: {} feature rows for {} nodes",
                features.matrix.rows(),
                graph.node_count()
            )));
        }
        if features.dim() != cfg.feature_dim {
            return Err(Error::validation(format!(
                "dimension mismatch: features have {} columns, config feature_dim is {}",
                features.dim(),
                cfg.feature_dim
            )));
        }
        Ok(TrainData {
            graph,
            features: &features.matrix,
            tokens: tokenize_graph(graph, cfg),
        })
    }
}

/// Joint loss on one batch and, if requested, its gradient for every model
/// tensor (canonical order).
pub fn batch_objective(
    model: &Model,
    data: &TrainData<'_>,
    batch: &[usize],
    cfg: &RunConfig,
    specs: &[ViewSpec],
    with_grad: bool,
) -> (f64, Option<Vec<Matrix>>) {
    let graph = data.graph;
    let mut pool: Vec<usize> = batch.to_vec();
    for &v in batch {
        pool.extend(readout_neighbors(graph, v, cfg.max_neighbors));
    }
    pool.sort_unstable();
    pool.dedup();
    let pos: Vec<usize> = batch
        .iter()
        .map(|v| pool.binary_search(v).expect("batch in pool"))
        .collect();

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, with_grad);
    let seqs: Vec<&TokenSequence> = pool.iter().map(|&v| &data.tokens[v]).collect();
    let text = bound.text_forward(&mut tape, &seqs);
    let plan = GcnPlan::new(graph, &pool, model.shape().graph_layers);
    let gnn = bound.gcn_forward(&mut tape, data.features, &plan);

    let readout = std::rc::Rc::new(readout_operator(graph, &pool, batch, cfg.max_neighbors));
    let text_node = tape.gather_rows(text, pos.clone());
    let graph_node = tape.gather_rows(gnn, pos);
    let text_mean = tape.spmm(readout.clone(), text);
    let graph_mean = tape.spmm(readout, gnn);
    let tables = TapeTables {
        text_node,
        text_ctx: tape.normalize_or(text_mean, text_node),
        graph_node,
        graph_ctx: tape.normalize_or(graph_mean, graph_node),
    };
    let loss = tape_joint_loss(&mut tape, &tables, cfg.tau, specs);
    let value = tape.value(loss).get(0, 0);
    if !with_grad {
        return (value, None);
    }
    let mut grads = tape.backward(loss);
    let out = bound
        .vars
        .iter()
        .zip(model.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols())))
        .collect();
    (value, Some(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(model: &Model, lr: f64) -> Self {
        let zeros = || {
            model
                .tensors()
                .iter()
                .map(|t| Matrix::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            lr,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn update(&mut self, model: &mut Model, grads: &[Matrix]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, g), m), v) in model
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.first.iter().chain(&self.second).all(Matrix::is_finite)
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: Adam,
    pub epoch: usize,
    pub rng: Rng,
    pub log: Vec<LossEntry>,
}

impl TrainState {
    pub fn new(cfg: &RunConfig) -> Self {
        let model = Model::init(ModelShape::from_config(cfg), cfg.seed);
        TrainState {
            optimizer: Adam::new(&model, cfg.learning_rate),
            model,
            epoch: 0,
            rng: stream(cfg.seed, Stream::Batches),
            log: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub enum TrainError {
    Invalid(Error),
    /// Non-finite loss or parameters; carries the state before the bad step.
    Diverged { message: String, last_good: Box<TrainState> },
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::Invalid(e) => e.fmt(f),
            TrainError::Diverged { message, .. } => write!(f, "training diverged: {message}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Invalid(e) => e,
            TrainError::Diverged { message, .. } => Error::Numeric(message),
        }
    }
}

/// Runs `cfg.epochs` epochs from a fresh seeded state.
pub fn train(graph: &TagGraph, features: &FrozenFeatures, cfg: &RunConfig) -> std::result::Result<TrainState, TrainError> {
    train_with(graph, features, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with<F>(
    graph: &TagGraph,
    features: &FrozenFeatures,
    cfg: &RunConfig,
    mut on_epoch: F,
) -> std::result::Result<TrainState, TrainError>
where
    F: FnMut(&TrainState),
{
    cfg.validate().map_err(TrainError::Invalid)?;
    if graph.node_count() == 0 {
        return Err(TrainError::Invalid(Error::validation("cannot train on an empty graph")));
    }
    let data = TrainData::new(graph, features, cfg).map_err(TrainError::Invalid)?;
    let specs = config_views(cfg);
    let mut state = TrainState::new(cfg);
    for epoch in 0..cfg.epochs {
        let batches = make_batches(graph.node_count(), cfg.batch_size, &mut state.rng)
            .map_err(TrainError::Invalid)?;
        for (b, batch) in batches.iter().enumerate() {
            let (loss, grads) = batch_objective(&state.model, &data, batch, cfg, &specs, true);
            let grads = grads.expect("gradients requested");
            if !loss.is_finite() || !grads.iter().all(Matrix::is_finite) {
                return Err(TrainError::Diverged {
                    message: format!("non-finite loss {loss} at epoch {epoch} batch {b}"),
                    last_good: Box::new(state),
                });
            }
            let before = (state.model.clone(), state.optimizer.clone());
            state.optimizer.update(&mut state.model, &grads);
            if !state.model.is_finite() || !state.optimizer.is_finite() {
                state.model = before.0;
                state.optimizer = before.1;
                return Err(TrainError::Diverged {
                    message: format!("non-finite parameters after epoch {epoch} batch {b}"),
                    last_good: Box::new(state),
                });
            }
            state.log.push(LossEntry { epoch, batch: b, loss });
        }
        state.epoch = epoch + 1;
        on_epoch(&state);
    }
    Ok(state)
}

pub fn loss_log_csv(log: &[LossEntry]) -> String {
    let mut out = String::from("epoch,batch,loss\n");
    for e in log {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.batch, e.loss));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradProbe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<GradProbe>,
}

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-4;

/// Compares analytic gradients of the first batch's loss with central
/// differences at `probe_count` randomly chosen scalar parameters of a
/// freshly initialized model. A probe picks a tensor uniformly, then an
/// entry uniformly.
pub fn grad_check(
    graph: &TagGraph,
    features: &FrozenFeatures,
    cfg: &RunConfig,
    probe_count: usize,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let data = TrainData::new(graph, features, cfg)?;
    let specs = config_views(cfg);
    let model = Model::init(ModelShape::from_config(cfg), cfg.seed);
    let mut rng = stream(cfg.seed, Stream::GradCheck);
    let batch = make_batches(graph.node_count(), cfg.batch_size, &mut rng)?.remove(0);
    let (_, grads) = batch_objective(&model, &data, &batch, cfg, &specs, true);
    let grads = grads.expect("gradients requested");

    let mut probes = Vec::with_capacity(probe_count);
    for _ in 0..probe_count {
        let t = rng.gen_range(0..model.tensors().len());
        let index = rng.gen_range(0..model.tensors()[t].len());
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.tensors_mut()[t].data_mut()[index] += delta;
            batch_objective(&m, &data, &batch, cfg, &specs, false).0
        };
        let numeric = (eval(GRAD_CHECK_STEP) - eval(-GRAD_CHECK_STEP)) / (2.0 * GRAD_CHECK_STEP);
        let analytic = grads[t].data()[index];
        let rel_error = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
        probes.push(GradProbe {
            tensor: model.names()[t].clone(),
            index,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: probes.iter().map(|p| p.rel_error).fold(0.0, f64::max),
        probes,
    })
}

/// Small configuration for derivative checks: `d = 8`, one transformer
/// layer, batches of four.
pub fn tiny_config(seed: u64) -> RunConfig {
    RunConfig {
        batch_size: 4,
        embed_dim: 8,
        text_layers: 1,
        text_width: 8,
        text_heads: 2,
        max_len: 16,
        vocab_size: 64,
        feature_dim: 16,
        seed,
        ..RunConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::hashed_features;
    use crate::synthgen::{generate, SynthSpec};

    fn rng(seed: u64) -> Rng {
        stream(seed, Stream::Batches)
    }

    #[test]
    fn exact_partition() {
        let b = make_batches(4, 2, &mut rng(1)).unwrap();
        assert_eq!(b.len(), 2);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn short_batch_merged() {
        let b = make_batches(5, 2, &mut rng(2)).unwrap();
        let mut sizes: Vec<usize> = b.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 3]);
    }

    #[test]
    fn partition_of_500() {
        let b = make_batches(500, 128, &mut rng(3)).unwrap();
        assert_eq!(b.len(), 4);
        let mut seen = vec![false; 500];
        for id in b.concat() {
            assert!(!seen[id], "id {id} repeated");
            seen[id] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn too_few_nodes() {
        assert!(make_batches(1, 2, &mut rng(0)).is_err());
    }

    fn tiny(seed: u64) -> (TagGraph, FrozenFeatures, RunConfig) {
        let spec = SynthSpec {
            nodes: 8,
            communities: 2,
            p_in: 0.6,
            p_out: 0.1,
            block_size: 12,
            tokens_mean: 10,
            tokens_jitter: 3,
            sentence_len: 4,
            noise: 0.1,
            seed,
        };
        let g = generate(&spec).unwrap();
        let cfg = tiny_config(seed);
        let f = hashed_features(&g, cfg.vocab_size, cfg.feature_dim, seed);
        (g, f, cfg)
    }

    #[test]
    fn zero_epochs_leave_init() {
        let (g, f, mut cfg) = tiny(5);
        cfg.epochs = 0;
        let s = train(&g, &f, &cfg).unwrap();
        assert_eq!(s.model, Model::init(ModelShape::from_config(&cfg), cfg.seed));
        assert!(s.log.is_empty());
    }

    #[test]
    fn zero_lr_single_step() {
        let (g, f, mut cfg) = tiny(6);
        cfg.epochs = 1;
        cfg.batch_size = 8;
        cfg.learning_rate = 0.0;
        let s = train(&g, &f, &cfg).unwrap();
        assert_eq!(s.model, Model::init(ModelShape::from_config(&cfg), cfg.seed));
        assert_eq!(s.log.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let (g, f, mut cfg) = tiny(7);
        cfg.learning_rate = 1e-2;
        let a = train(&g, &f, &cfg).unwrap();
        let b = train(&g, &f, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert!(a.model != Model::init(ModelShape::from_config(&cfg), cfg.seed));
    }

    #[test]
    fn grad_check_tiny() {
        let (g, f, cfg) = tiny(8);
        let r = grad_check(&g, &f, &cfg, 32).unwrap();
        assert!(r.max_rel_error <= 1e-3, "{r:?}");
    }

    #[test]
    fn unused_token_row_has_zero_gradient() {
        let (g, f, cfg) = tiny(9);
        let data = TrainData::new(&g, &f, &cfg).unwrap();
        let used: std::collections::BTreeSet<u32> =
            data.tokens.iter().flat_map(|t| t.ids().iter().copied()).collect();
        let unused = (3..cfg.vocab_size as u32).find(|t| !used.contains(t)).unwrap() as usize;
        let model = Model::init(ModelShape::from_config(&cfg), cfg.seed);
        let specs = config_views(&cfg);
        let batch: Vec<usize> = (0..4).collect();
        let (_, grads) = batch_objective(&model, &data, &batch, &cfg, &specs, true);
        let ti = model.names().iter().position(|n| n == "text.tok_emb").unwrap();
        let row = grads.unwrap()[ti].row(unused).to_vec();
        assert!(row.iter().all(|&v| v == 0.0));
        let mut m = model.clone();
        m.tensors_mut()[ti].row_mut(unused)[0] += 1e-4;
        let base = batch_objective(&model, &data, &batch, &cfg, &specs, false).0;
        assert_eq!(batch_objective(&m, &data, &batch, &cfg, &specs, false).0, base);
    }

    #[test]
    fn gradient_is_linear_in_gamma() {
        let (g, f, cfg) = tiny(10);
        let data = TrainData::new(&g, &f, &cfg).unwrap();
        let model = Model::init(ModelShape::from_config(&cfg), cfg.seed);
        let batch: Vec<usize> = (0..4).collect();
        let grads_at = |gamma: f64| {
            let c = RunConfig { gamma, ..cfg.clone() };
            batch_objective(&model, &data, &batch, &c, &config_views(&c), true).1.unwrap()
        };
        let (g0, g1, g2) = (grads_at(0.0), grads_at(0.37), grads_at(0.74));
        for ((a, b), c) in g0.iter().zip(&g1).zip(&g2) {
            for ((x0, x1), x2) in a.data().iter().zip(b.data()).zip(c.data()) {
                assert!(((x2 - x0) - 2.0 * (x1 - x0)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn loss_log_format() {
        let csv = loss_log_csv(&[LossEntry { epoch: 0, batch: 1, loss: 0.5 }]);
        assert_eq!(csv, "epoch,batch,loss\n0,1,0.5\n");
    }
}
