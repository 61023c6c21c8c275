//! Text and graph encoders and the neighborhood readout.
//!
//! The text encoder is a pre-norm transformer over token ids; the node's
//! embedding is its final hidden state at the EOS position, projected to
//! `embed_dim` and L2-normalized. The graph encoder projects the frozen
//! features to `embed_dim` and applies `graph_layers` residual GCN layers
//! `X ← ReLU(Â X W) + X` with `Â = D^{-1/2}(A + I)D^{-1/2}`.
//!
//! All parameters live in one flat tensor list ([`Model::tensors`]) whose
//! order is fixed by [`ModelShape`]; the optimizer and the checkpoint
//! format both rely on that order.

use std::collections::BTreeSet;
use std::rc::Rc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Span, Tape, Var};
use crate::config::RunConfig;
use crate::featurizer::TokenSequence;
use crate::graph::TagGraph;
use crate::linalg::{Csr, Matrix};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab_size: usize,
    pub max_len: usize,
    pub width: usize,
    pub heads: usize,
    pub text_layers: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub graph_layers: usize,
}

impl ModelShape {
    pub fn from_config(c: &RunConfig) -> Self {
        ModelShape {
            vocab_size: c.vocab_size,
            max_len: c.max_len,
            width: c.text_width,
            heads: c.text_heads,
            text_layers: c.text_layers,
            embed_dim: c.embed_dim,
            feature_dim: c.feature_dim,
            graph_layers: c.graph_layers,
        }
    }

    pub fn ff_width(&self) -> usize {
        4 * self.width
    }
}

/// What a tensor is, for initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `±1/√fan_in`.
    Uniform { fan_in: usize },
    Const(f64),
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    ln1_gain: usize,
    ln1_bias: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2_gain: usize,
    ln2_bias: usize,
    ff1: usize,
    ff1_bias: usize,
    ff2: usize,
    ff2_bias: usize,
}

/// Positions of each tensor inside the flat list.
#[derive(Debug, Clone)]
struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    blocks: Vec<BlockIdx>,
    lnf_gain: usize,
    lnf_bias: usize,
    text_proj: usize,
    graph_in: usize,
    gcn: Vec<usize>,
}

struct LayoutBuilder {
    specs: Vec<(String, usize, usize, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push((name.into(), rows, cols, init));
        self.specs.len() - 1
    }
}

fn layout(shape: &ModelShape) -> (Layout, Vec<(String, usize, usize, Init)>) {
    let w = shape.width;
    let ff = shape.ff_width();
    let d = shape.embed_dim;
    let mut b = LayoutBuilder { specs: Vec::new() };
    let u = |fan_in| Init::Uniform { fan_in };
    let tok_emb = b.add("text.tok_emb", shape.vocab_size, w, u(w));
    let pos_emb = b.add("text.pos_emb", shape.max_len, w, u(w));
    let blocks = (0..shape.text_layers)
        .map(|l| {
            let p = |s: &str| format!("text.block{l}.{s}");
            BlockIdx {
                ln1_gain: b.add(p("ln1_gain"), 1, w, Init::Const(1.0)),
                ln1_bias: b.add(p("ln1_bias"), 1, w, Init::Const(0.0)),
                wq: b.add(p("wq"), w, w, u(w)),
                wk: b.add(p("wk"), w, w, u(w)),
                wv: b.add(p("wv"), w, w, u(w)),
                wo: b.add(p("wo"), w, w, u(w)),
                ln2_gain: b.add(p("ln2_gain"), 1, w, Init::Const(1.0)),
                ln2_bias: b.add(p("ln2_bias"), 1, w, Init::Const(0.0)),
                ff1: b.add(p("ff1"), w, ff, u(w)),
                ff1_bias: b.add(p("ff1_bias"), 1, ff, u(w)),
                ff2: b.add(p("ff2"), ff, w, u(ff)),
                ff2_bias: b.add(p("ff2_bias"), 1, w, u(ff)),
            }
        })
        .collect();
    let lnf_gain = b.add("text.lnf_gain", 1, w, Init::Const(1.0));
    let lnf_bias = b.add("text.lnf_bias", 1, w, Init::Const(0.0));
    let text_proj = b.add("text.proj", w, d, u(w));
    let graph_in = b.add("graph.w_in", shape.feature_dim, d, u(shape.feature_dim));
    let gcn = (0..shape.graph_layers)
        .map(|l| b.add(format!("graph.gcn{l}"), d, d, u(d)))
        .collect();
    (
        Layout {
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain,
            lnf_bias,
            text_proj,
            graph_in,
            gcn,
        },
        b.specs,
    )
}

/// Parameters of both encoders.
#[derive(Debug, Clone)]
pub struct Model {
    shape: ModelShape,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.tensors == other.tensors
    }
}

impl Model {
    /// Seeded initialization: uniform `±1/√fan_in` for weights and biases,
    /// layer-norm gains 1 and offsets 0.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let (layout, specs) = layout(&shape);
        let mut rng = stream(seed, Stream::Init);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, rows, cols, init) in specs {
            let data = match init {
                Init::Const(c) => vec![c; rows * cols],
                Init::Uniform { fan_in } => {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect()
                }
            };
            names.push(name);
            tensors.push(Matrix::from_vec(rows, cols, data));
        }
        Model {
            shape,
            layout,
            names,
            tensors,
        }
    }

    /// Rebuilds a model from tensors in canonical order, checking shapes.
    pub fn from_tensors(shape: ModelShape, tensors: Vec<Matrix>) -> Result<Self, String> {
        let (layout, specs) = layout(&shape);
        if specs.len() != tensors.len() {
            return Err(format!("expected {} tensors, got {}", specs.len(), tensors.len()));
        }
        for ((name, r, c, _), t) in specs.iter().zip(&tensors) {
            if t.shape() != (*r, *c) {
                return Err(format!("{name}: expected {r}x{c}, got {}x{}", t.rows(), t.cols()));
            }
        }
        Ok(Model {
            shape,
            layout,
            names: specs.into_iter().map(|s| s.0).collect(),
            tensors,
        })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    /// Puts every tensor on the tape, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound {
            vars,
            layout: self.layout.clone(),
            heads: self.shape.heads,
        }
    }
}

/// Tape handles for every model tensor.
pub struct Bound {
    pub vars: Vec<Var>,
    layout: Layout,
    heads: usize,
}

impl Bound {
    fn v(&self, i: usize) -> Var {
        self.vars[i]
    }

    /// Unit-norm text embeddings, one row per sequence. Padding positions
    /// are masked out of attention entirely.
    pub fn text_forward(&self, tape: &mut Tape, seqs: &[&TokenSequence]) -> Var {
        let mut tok_idx = Vec::new();
        let mut pos_idx = Vec::new();
        let mut spans = Vec::with_capacity(seqs.len());
        let mut eos_rows = Vec::with_capacity(seqs.len());
        for s in seqs {
            let start = tok_idx.len();
            for (p, id) in s.unpadded().enumerate() {
                tok_idx.push(id as usize);
                pos_idx.push(p);
            }
            let len = tok_idx.len() - start;
            assert!(len > 0, "token sequence without EOS");
            spans.push(Span { start, len });
            eos_rows.push(start + len - 1);
        }
        let spans: Rc<[Span]> = spans.into();
        let l = &self.layout;
        let tok = tape.gather_rows(self.v(l.tok_emb), tok_idx);
        let pos = tape.gather_rows(self.v(l.pos_emb), pos_idx);
        let mut x = tape.add(tok, pos);
        for b in &l.blocks {
            let h = tape.layer_norm(x, self.v(b.ln1_gain), self.v(b.ln1_bias));
            let q = tape.matmul(h, self.v(b.wq));
            let k = tape.matmul(h, self.v(b.wk));
            let v = tape.matmul(h, self.v(b.wv));
            let a = tape.attention(q, k, v, spans.clone(), self.heads);
            let o = tape.matmul(a, self.v(b.wo));
            x = tape.add(x, o);
            let h = tape.layer_norm(x, self.v(b.ln2_gain), self.v(b.ln2_bias));
            let f = tape.matmul(h, self.v(b.ff1));
            let f = tape.add_row(f, self.v(b.ff1_bias));
            let f = tape.relu(f);
            let f = tape.matmul(f, self.v(b.ff2));
            let f = tape.add_row(f, self.v(b.ff2_bias));
            x = tape.add(x, f);
        }
        let eos = tape.gather_rows(x, eos_rows);
        let eos = tape.layer_norm(eos, self.v(l.lnf_gain), self.v(l.lnf_bias));
        let out = tape.matmul(eos, self.v(l.text_proj));
        tape.normalize(out)
    }

    /// Unit-norm graph embeddings for `plan.targets()`, computed exactly on
    /// the plan's receptive field.
    pub fn gcn_forward(&self, tape: &mut Tape, features: &Matrix, plan: &GcnPlan) -> Var {
        let l = &self.layout;
        assert_eq!(plan.layers.len(), l.gcn.len(), "plan depth does not match model");
        let input = tape.constant(features.gather_rows(&plan.input_nodes));
        let mut x = tape.matmul(input, self.v(l.graph_in));
        for (layer, &w) in plan.layers.iter().zip(&l.gcn) {
            let h = tape.matmul(x, self.v(w));
            let agg = tape.spmm(layer.adjacency.clone(), h);
            let act = tape.relu(agg);
            let skip = tape.gather_rows(x, layer.residual.clone());
            x = tape.add(act, skip);
        }
        tape.normalize(x)
    }
}

/// `1/√((deg(u)+1)(deg(v)+1))`, the entry of `Â` for `v ∈ N(u) ∪ {u}`.
#[inline]
fn norm_weight(graph: &TagGraph, u: usize, v: usize) -> f64 {
    1.0 / (((graph.degree(u) + 1) * (graph.degree(v) + 1)) as f64).sqrt()
}

/// Full `n × n` operator `D^{-1/2}(A + I)D^{-1/2}`.
pub fn normalized_adjacency(graph: &TagGraph) -> Csr {
    let n = graph.node_count();
    let rows = (0..n)
        .map(|u| {
            let mut entries: Vec<(usize, f64)> = graph
                .neighbors(u)
                .iter()
                .map(|&v| (v, norm_weight(graph, u, v)))
                .collect();
            let pos = entries.partition_point(|&(v, _)| v < u);
            entries.insert(pos, (u, norm_weight(graph, u, u)));
            entries
        })
        .collect();
    Csr::from_row_entries(n, rows)
}

#[derive(Debug, Clone)]
pub struct GcnLayerPlan {
    /// Rows: output nodes; columns: positions in the layer's input set.
    pub adjacency: Rc<Csr>,
    /// Position of each output node inside the input set.
    pub residual: Vec<usize>,
}

/// Receptive-field plan for evaluating the GCN on a subset of nodes.
#[derive(Debug, Clone)]
pub struct GcnPlan {
    targets: Vec<usize>,
    input_nodes: Vec<usize>,
    layers: Vec<GcnLayerPlan>,
}

impl GcnPlan {
    /// Plans the forward pass for `targets` (any order, no duplicates)
    /// through `depth` layers. Layer inputs are the `k`-hop closures of the
    /// targets, so outputs equal the full-graph forward pass exactly.
    pub fn new(graph: &TagGraph, targets: &[usize], depth: usize) -> Self {
        let mut sets: Vec<Vec<usize>> = vec![targets.to_vec()];
        for _ in 0..depth {
            let prev = sets.last().unwrap();
            let mut next: BTreeSet<usize> = prev.iter().copied().collect();
            for &u in prev {
                next.extend(graph.neighbors(u).iter().copied());
            }
            sets.push(next.into_iter().collect());
        }
        let mut layers = Vec::with_capacity(depth);
        for l in (1..=depth).rev() {
            let (inputs, outputs) = (&sets[l], &sets[l - 1]);
            let pos = |v: usize| inputs.binary_search(&v).expect("closure contains neighbor");
            let rows = outputs
                .iter()
                .map(|&u| {
                    let mut e: Vec<(usize, f64)> = graph
                        .neighbors(u)
                        .iter()
                        .map(|&v| (pos(v), norm_weight(graph, u, v)))
                        .collect();
                    e.push((pos(u), norm_weight(graph, u, u)));
                    e
                })
                .collect();
            layers.push(GcnLayerPlan {
                adjacency: Rc::new(Csr::from_row_entries(inputs.len(), rows)),
                residual: outputs.iter().map(|&u| pos(u)).collect(),
            });
        }
        // The outermost set is only sorted when depth > 0.
        let input_nodes = sets.pop().unwrap();
        GcnPlan {
            targets: targets.to_vec(),
            input_nodes,
            layers,
        }
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn input_nodes(&self) -> &[usize] {
        &self.input_nodes
    }
}

/// Neighbors averaged by the readout: all of them, or an evenly spaced
/// subset of the sorted list when `cap` is exceeded.
pub fn readout_neighbors(graph: &TagGraph, v: usize, cap: Option<usize>) -> Vec<usize> {
    let nb = graph.neighbors(v);
    match cap {
        Some(k) if nb.len() > k => (0..k).map(|i| nb[i * nb.len() / k]).collect(),
        _ => nb.to_vec(),
    }
}

/// Mean-of-neighbors operator for `batch`, with columns indexing `pool`
/// (sorted ids that must contain every used neighbor).
pub fn readout_operator(graph: &TagGraph, pool: &[usize], batch: &[usize], cap: Option<usize>) -> Csr {
    let rows = batch
        .iter()
        .map(|&v| {
            let nb = readout_neighbors(graph, v, cap);
            let w = 1.0 / nb.len() as f64;
            nb.into_iter()
                .map(|u| (pool.binary_search(&u).expect("pool covers neighbors"), w))
                .collect()
        })
        .collect();
    Csr::from_row_entries(pool.len(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Text,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Node,
    Context,
}

/// Per-node embeddings of one modality at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Matrix,
    pub modality: Modality,
    pub scale: Scale,
    pub normalized: bool,
}

/// Context embeddings: mean of the (unit) neighbor rows, renormalized;
/// isolated nodes and zero means fall back to the node's own row.
pub fn readout_context(node: &Matrix, graph: &TagGraph, cap: Option<usize>) -> Matrix {
    let mut out = Matrix::zeros(node.rows(), node.cols());
    for v in 0..node.rows() {
        let nb = readout_neighbors(graph, v, cap);
        let row = out.row_mut(v);
        for &u in &nb {
            for (o, x) in row.iter_mut().zip(node.row(u)) {
                *o += x;
            }
        }
        if !nb.is_empty() {
            let k = nb.len() as f64;
            row.iter_mut().for_each(|o| *o /= k);
        }
        let n = crate::linalg::norm(row);
        if n > crate::autodiff::FALLBACK_NORM {
            row.iter_mut().for_each(|o| *o /= n);
        } else {
            row.copy_from_slice(node.row(v));
        }
    }
    out
}

/// The four embedding tables of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub text_node: EmbeddingTable,
    pub text_ctx: EmbeddingTable,
    pub graph_node: EmbeddingTable,
    pub graph_ctx: EmbeddingTable,
}

/// Sequences per text-encoder call during inference.
const TEXT_CHUNK: usize = 256;

/// Forward pass of both encoders over every node, without gradients.
pub fn embed_all(
    model: &Model,
    graph: &TagGraph,
    features: &Matrix,
    tokens: &[TokenSequence],
    cap: Option<usize>,
) -> Embeddings {
    let n = graph.node_count();
    let d = model.shape().embed_dim;
    let mut text = Matrix::zeros(n, d);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(TEXT_CHUNK) {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let seqs: Vec<&TokenSequence> = chunk.iter().map(|&v| &tokens[v]).collect();
        let out = bound.text_forward(&mut tape, &seqs);
        for (i, &v) in chunk.iter().enumerate() {
            text.row_mut(v).copy_from_slice(tape.value(out).row(i));
        }
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let plan = GcnPlan::new(graph, &all, model.shape().graph_layers);
    let g = bound.gcn_forward(&mut tape, features, &plan);
    let graph_mat = tape.value(g).clone();

    let table = |matrix, modality, scale| EmbeddingTable {
        matrix,
        modality,
        scale,
        normalized: true,
    };
    Embeddings {
        text_ctx: table(readout_context(&text, graph, cap), Modality::Text, Scale::Context),
        graph_ctx: table(readout_context(&graph_mat, graph, cap), Modality::Graph, Scale::Context),
        text_node: table(text, Modality::Text, Scale::Node),
        graph_node: table(graph_mat, Modality::Graph, Scale::Node),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::{tokenize, EOS};
    use crate::linalg::norm;

    fn shape(layers: usize) -> ModelShape {
        ModelShape {
            vocab_size: 50,
            max_len: 12,
            width: 8,
            heads: 2,
            text_layers: layers,
            embed_dim: 6,
            feature_dim: 5,
            graph_layers: 2,
        }
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> TagGraph {
        TagGraph::new((0..n).map(|i| format!("w{i} x{}", i % 3)).collect(), edges).unwrap()
    }

    /// `D^{-1/2}(A+I)D^{-1/2}` by dense matrix products.
    fn dense_norm_adj(g: &TagGraph) -> Matrix {
        let n = g.node_count();
        let mut a = Matrix::zeros(n, n);
        for u in 0..n {
            a.set(u, u, 1.0);
            for &v in g.neighbors(u) {
                a.set(u, v, 1.0);
            }
        }
        let mut dinv = Matrix::zeros(n, n);
        for u in 0..n {
            let deg: f64 = a.row(u).iter().sum();
            dinv.set(u, u, 1.0 / deg.sqrt());
        }
        dinv.matmul(&a).matmul(&dinv)
    }

    #[test]
    fn single_node_adjacency() {
        let a = normalized_adjacency(&graph(1, &[])).to_dense();
        assert_eq!(a.to_rows(), vec![vec![1.0]]);
    }

    #[test]
    fn two_node_adjacency() {
        let a = normalized_adjacency(&graph(2, &[(0, 1)])).to_dense();
        for v in a.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn path_adjacency_matches_dense_oracle() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let sparse = normalized_adjacency(&g).to_dense();
        let dense = dense_norm_adj(&g);
        for (a, b) in sparse.data().iter().zip(dense.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_rows_sum_to_one() {
        let n = 7;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let a = normalized_adjacency(&graph(n, &edges)).to_dense();
        for r in a.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn features(n: usize, dim: usize) -> Matrix {
        Matrix::from_vec(n, dim, (0..n * dim).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect())
    }

    #[test]
    fn local_gcn_equals_full_forward() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (1, 7), (7, 8)];
        let g = graph(9, &edges);
        let model = Model::init(shape(1), 3);
        let f = features(9, 5);
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let all: Vec<usize> = (0..9).collect();
        let full = b.gcn_forward(&mut tape, &f, &GcnPlan::new(&g, &all, 2));
        let targets = [6, 0, 3];
        let local = b.gcn_forward(&mut tape, &f, &GcnPlan::new(&g, &targets, 2));
        for (i, &t) in targets.iter().enumerate() {
            for (a, c) in tape.value(local).row(i).iter().zip(tape.value(full).row(t)) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gcn_matches_dense_layer_oracle() {
        let g = graph(4, &[(0, 1), (1, 2), (1, 3)]);
        let model = Model::init(shape(1), 9);
        let f = features(4, 5);
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let all: Vec<usize> = (0..4).collect();
        let out = b.gcn_forward(&mut tape, &f, &GcnPlan::new(&g, &all, 2));

        let a = dense_norm_adj(&g);
        let mut x = f.matmul(model.tensor("graph.w_in").unwrap());
        for name in ["graph.gcn0", "graph.gcn1"] {
            let mut h = a.matmul(&x.matmul(model.tensor(name).unwrap()));
            h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            h.add_assign(&x);
            x = h;
        }
        for r in 0..4 {
            let n = norm(x.row(r));
            for (o, e) in tape.value(out).row(r).iter().zip(x.row(r)) {
                assert!((o - e / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gcn_invariant_to_adjacency_order() {
        let e1 = [(0, 1), (0, 2), (0, 3), (2, 3)];
        let e2 = [(3, 2), (3, 0), (2, 0), (1, 0)];
        let (g1, g2) = (graph(4, &e1), graph(4, &e2));
        let model = Model::init(shape(1), 5);
        let f = features(4, 5);
        let all: Vec<usize> = (0..4).collect();
        let run = |g: &TagGraph| {
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, false);
            let o = b.gcn_forward(&mut tape, &f, &GcnPlan::new(g, &all, 2));
            tape.value(o).clone()
        };
        assert_eq!(run(&g1), run(&g2));
    }

    fn text_out(model: &Model, seqs: &[TokenSequence]) -> Matrix {
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let refs: Vec<&TokenSequence> = seqs.iter().collect();
        let o = b.text_forward(&mut tape, &refs);
        tape.value(o).clone()
    }

    #[test]
    fn text_rows_are_unit_and_deterministic() {
        let model = Model::init(shape(2), 1);
        let t = tokenize("alpha beta gamma delta", 50, 12);
        let out = text_out(&model, &[t.clone(), t, tokenize("other words", 50, 12)]);
        assert_eq!(out.row(0), out.row(1));
        for r in out.iter_rows() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_does_not_change_output() {
        let model = Model::init(shape(2), 2);
        let t = tokenize("padding should be invisible", 50, 12);
        let a = text_out(&model, std::slice::from_ref(&t));
        let b = text_out(&model, &[t.with_padding(5)]);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    fn ln(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let rs = 1.0 / (var + 1e-5).sqrt();
        x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) * rs * g + b).collect()
    }

    fn vecmat(x: &[f64], m: &Matrix) -> Vec<f64> {
        (0..m.cols()).map(|c| (0..m.rows()).map(|r| x[r] * m.get(r, c)).sum()).collect()
    }

    #[test]
    fn single_eos_matches_hand_rolled_layer() {
        let mut model = Model::init(shape(1), 4);
        model
            .tensor_mut("text.block0.wo")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let out = text_out(&model, &[tokenize("", 50, 12)]);

        let t = |n: &str| model.tensor(n).unwrap();
        let x: Vec<f64> = t("text.tok_emb")
            .row(EOS as usize)
            .iter()
            .zip(t("text.pos_emb").row(0))
            .map(|(a, b)| a + b)
            .collect();
        let h = ln(&x, t("text.block0.ln2_gain").row(0), t("text.block0.ln2_bias").row(0));
        let mut f = vecmat(&h, t("text.block0.ff1"));
        for (v, b) in f.iter_mut().zip(t("text.block0.ff1_bias").row(0)) {
            *v = (*v + b).max(0.0);
        }
        let f = vecmat(&f, t("text.block0.ff2"));
        let x2: Vec<f64> = x
            .iter()
            .zip(&f)
            .zip(t("text.block0.ff2_bias").row(0))
            .map(|((a, b), c)| a + b + c)
            .collect();
        let y = vecmat(&ln(&x2, t("text.lnf_gain").row(0), t("text.lnf_bias").row(0)), t("text.proj"));
        let n = norm(&y);
        for (o, e) in out.row(0).iter().zip(&y) {
            assert!((o - e / n).abs() < 1e-12);
        }
    }

    #[test]
    fn readout_single_neighbor_copies_it() {
        let g = graph(2, &[(0, 1)]);
        let node = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8]]);
        let ctx = readout_context(&node, &g, None);
        assert_eq!(ctx.row(0), &[0.6, 0.8]);
        assert_eq!(ctx.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn readout_cancellation_falls_back() {
        let g = graph(3, &[(0, 1), (0, 2)]);
        let node = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.6, 0.8], vec![-0.6, -0.8]]);
        let ctx = readout_context(&node, &g, None);
        assert_eq!(ctx.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn readout_isolated_falls_back() {
        let g = graph(2, &[]);
        let node = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(readout_context(&node, &g, None), node);
    }

    #[test]
    fn readout_three_neighbors_arithmetic() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let node = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.6, 0.8],
            vec![0.8, 0.0, 0.6],
        ]);
        let ctx = readout_context(&node, &g, None);
        let mean = [0.8 / 3.0, 1.6 / 3.0, 1.4 / 3.0];
        let n = norm(&mean);
        for (c, m) in ctx.row(0).iter().zip(mean) {
            assert!((c - m / n).abs() < 1e-15);
        }
    }

    #[test]
    fn readout_cap_selects_spread_subset() {
        let edges: Vec<_> = (1..=10).map(|v| (0, v)).collect();
        let g = graph(11, &edges);
        assert_eq!(readout_neighbors(&g, 0, Some(5)), vec![1, 3, 5, 7, 9]);
        assert_eq!(readout_neighbors(&g, 0, None).len(), 10);
        assert_eq!(readout_neighbors(&g, 3, Some(5)), vec![0]);
    }

    #[test]
    fn tensors_round_trip_through_from_tensors() {
        let m = Model::init(shape(2), 11);
        let back = Model::from_tensors(*m.shape(), m.tensors().to_vec()).unwrap();
        assert_eq!(back, m);
        let mut bad = m.tensors().to_vec();
        bad.pop();
        assert!(Model::from_tensors(*m.shape(), bad).is_err());
    }
}
