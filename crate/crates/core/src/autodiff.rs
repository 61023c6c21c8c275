//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its value and whatever the
//! backward rule needs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints. Nodes built only from constants carry no gradient
//! and are skipped.

use std::rc::Rc;

use crate::linalg::{Csr, Matrix};

/// Row norms at or below this are treated as zero by [`Tape::normalize_or`].
pub const FALLBACK_NORM: f64 = 1e-12;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// One packed sequence: rows `start..start + len` of the attention inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    Gather {
        src: Var,
        idx: Vec<usize>,
    },
    SpMM {
        a: Rc<Csr>,
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spans: Rc<[Span]>,
        heads: usize,
        probs: Vec<Matrix>,
    },
    Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    NormalizeOr {
        x: Var,
        fallback: Var,
        norms: Vec<f64>,
    },
    InfoNce {
        logits: Var,
        probs: Matrix,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints indexed by [`Var`].
pub struct Gradients(Vec<Option<Matrix>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.0[v.0].take()
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Copies the `head`-th column block of rows `span` out of `m`.
fn head_block(m: &Matrix, span: Span, head: usize, dh: usize) -> Matrix {
    let mut out = Matrix::zeros(span.len, dh);
    for r in 0..span.len {
        out.row_mut(r)
            .copy_from_slice(&m.row(span.start + r)[head * dh..(head + 1) * dh]);
    }
    out
}

fn add_head_block(dst: &mut Matrix, block: &Matrix, span: Span, head: usize, dh: usize) {
    for r in 0..span.len {
        let row = &mut dst.row_mut(span.start + r)[head * dh..(head + 1) * dh];
        for (d, s) in row.iter_mut().zip(block.row(r)) {
            *d += s;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A trainable input.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::MatMul(a, b), g)
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::MatMulBt(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Add(a, b), g)
    }

    /// Adds the `1 × cols` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a single row");
        assert_eq!(b.cols(), self.value(a).cols(), "bias width mismatch");
        let b = b.row(0).to_vec();
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            for (x, y) in value.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        let g = self.grad_of(&[a, bias]);
        self.push(value, Op::AddRow(a, bias), g)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Scale(a, s), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let value = Matrix::from_vec(
            src.rows(),
            src.cols(),
            src.data().iter().map(|&v| v.max(0.0)).collect(),
        );
        let g = self.grad_of(&[a]);
        self.push(value, Op::Relu(a), g)
    }

    /// Per-row layer normalization with `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        let gv = self.value(gain).row(0).to_vec();
        let bv = self.value(bias).row(0).to_vec();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for (h, &v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * rs;
            }
            let out = value.row_mut(r);
            for c in 0..cols {
                out[c] = xhat.get(r, c) * gv[c] + bv[c];
            }
        }
        let g = self.grad_of(&[x, gain, bias]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            g,
        )
    }

    pub fn gather_rows(&mut self, src: Var, idx: Vec<usize>) -> Var {
        let value = self.value(src).gather_rows(&idx);
        let g = self.grad_of(&[src]);
        self.push(value, Op::Gather { src, idx }, g)
    }

    /// Sparse–dense product `a · x`.
    pub fn spmm(&mut self, a: Rc<Csr>, x: Var) -> Var {
        let value = a.matmul(self.value(x));
        let g = self.grad_of(&[x]);
        self.push(value, Op::SpMM { a, x }, g)
    }

    /// Multi-head scaled dot-product self-attention, computed independently
    /// within each span. Rows outside every span get zero output.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spans: Rc<[Span]>, heads: usize) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let (rows, width) = qm.shape();
        assert_eq!(width % heads, 0, "width not divisible by heads");
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(rows, width);
        let mut probs = Vec::with_capacity(spans.len() * heads);
        for &span in spans.iter() {
            for h in 0..heads {
                let qh = head_block(qm, span, h, dh);
                let kh = head_block(km, span, h, dh);
                let vh = head_block(vm, span, h, dh);
                let mut p = qh.matmul_bt(&kh).scale(scale);
                for r in 0..span.len {
                    softmax_in_place(p.row_mut(r));
                }
                add_head_block(&mut out, &p.matmul(&vh), span, h, dh);
                probs.push(p);
            }
        }
        let g = self.grad_of(&[q, k, v]);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                spans,
                heads,
                probs,
            },
            g,
        )
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let norms: Vec<f64> = xm.iter_rows().map(crate::linalg::norm).collect();
        let mut value = xm.clone();
        for (r, &n) in norms.iter().enumerate() {
            value.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        let g = self.grad_of(&[x]);
        self.push(value, Op::Normalize { x, norms }, g)
    }

    /// Row-wise: `x / ‖x‖`, or the matching row of `fallback` when
    /// `‖x‖ ≤ FALLBACK_NORM`.
    pub fn normalize_or(&mut self, x: Var, fallback: Var) -> Var {
        let xm = self.value(x);
        let fm = self.value(fallback);
        assert_eq!(xm.shape(), fm.shape(), "fallback shape mismatch");
        let norms: Vec<f64> = xm.iter_rows().map(crate::linalg::norm).collect();
        let mut value = xm.clone();
        for (r, &n) in norms.iter().enumerate() {
            if n > FALLBACK_NORM {
                value.row_mut(r).iter_mut().for_each(|v| *v /= n);
            } else {
                value.row_mut(r).copy_from_slice(fm.row(r));
            }
        }
        let g = self.grad_of(&[x, fallback]);
        self.push(value, Op::NormalizeOr { x, fallback, norms }, g)
    }

    /// Mean over rows of `-log softmax(row)[i]` for an `N × N` logit matrix
    /// whose diagonal holds the positive pairs. Returns a `1 × 1` node.
    pub fn info_nce(&mut self, logits: Var) -> Var {
        let lm = self.value(logits);
        let n = lm.rows();
        assert_eq!(n, lm.cols(), "info_nce expects a square matrix");
        let mut probs = lm.clone();
        let mut loss = 0.0;
        for i in 0..n {
            let row = lm.row(i);
            loss += crate::linalg::logsumexp(row) - row[i];
            softmax_in_place(probs.row_mut(i));
        }
        let value = Matrix::scalar(if n == 0 { 0.0 } else { loss / n as f64 });
        let g = self.grad_of(&[logits]);
        self.push(value, Op::InfoNce { logits, probs }, g)
    }

    /// `Σ wᵢ·xᵢ` over `1 × 1` nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.value(v).get(0, 0)).sum();
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let g = self.grad_of(&vars);
        self.push(Matrix::scalar(total), Op::WeightedSum(terms), g)
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix, needs: bool) {
            if !needs {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            let needs = |v: &Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(gy);
                }
                Op::MatMul(a, b) => {
                    if needs(a) {
                        acc(&mut grads, *a, gy.matmul_bt(self.value(*b)), true);
                    }
                    if needs(b) {
                        acc(&mut grads, *b, self.value(*a).matmul_at(&gy), true);
                    }
                }
                Op::MatMulBt(a, b) => {
                    if needs(a) {
                        acc(&mut grads, *a, gy.matmul(self.value(*b)), true);
                    }
                    if needs(b) {
                        acc(&mut grads, *b, gy.matmul_at(self.value(*a)), true);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, gy.clone(), needs(b));
                    acc(&mut grads, *a, gy, needs(a));
                }
                Op::AddRow(a, bias) => {
                    if needs(bias) {
                        let mut gb = Matrix::zeros(1, gy.cols());
                        for row in gy.iter_rows() {
                            for (s, v) in gb.row_mut(0).iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        acc(&mut grads, *bias, gb, true);
                    }
                    acc(&mut grads, *a, gy, needs(a));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, gy.scale(*s), needs(a)),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut g = gy;
                    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    acc(&mut grads, *a, g, needs(a));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let (rows, cols) = gy.shape();
                    let gv = self.value(*gain).row(0);
                    if needs(gain) || needs(bias) {
                        let mut gg = Matrix::zeros(1, cols);
                        let mut gb = Matrix::zeros(1, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                let d = gy.get(r, c);
                                gg.data_mut()[c] += d * xhat.get(r, c);
                                gb.data_mut()[c] += d;
                            }
                        }
                        acc(&mut grads, *gain, gg, needs(gain));
                        acc(&mut grads, *bias, gb, needs(bias));
                    }
                    if needs(x) {
                        let mut gx = Matrix::zeros(rows, cols);
                        let mut dxhat = vec![0.0; cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                dxhat[c] = gy.get(r, c) * gv[c];
                            }
                            let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                            let mean_dx = dxhat
                                .iter()
                                .zip(xhat.row(r))
                                .map(|(d, h)| d * h)
                                .sum::<f64>()
                                / cols as f64;
                            let out = gx.row_mut(r);
                            for c in 0..cols {
                                out[c] = rstd[r] * (dxhat[c] - mean_d - xhat.get(r, c) * mean_dx);
                            }
                        }
                        acc(&mut grads, *x, gx, true);
                    }
                }
                Op::Gather { src, idx } => {
                    let s = self.value(*src);
                    let mut g = Matrix::zeros(s.rows(), s.cols());
                    for (o, &i) in idx.iter().enumerate() {
                        for (d, v) in g.row_mut(i).iter_mut().zip(gy.row(o)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *src, g, needs(src));
                }
                Op::SpMM { a, x } => {
                    acc(&mut grads, *x, a.transpose().matmul(&gy), needs(x));
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    spans,
                    heads,
                    probs,
                } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let (rows, width) = qm.shape();
                    let dh = width / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Matrix::zeros(rows, width);
                    let mut gk = Matrix::zeros(rows, width);
                    let mut gv = Matrix::zeros(rows, width);
                    let mut pi = 0;
                    for &span in spans.iter() {
                        for h in 0..*heads {
                            let p = &probs[pi];
                            pi += 1;
                            let qh = head_block(qm, span, h, dh);
                            let kh = head_block(km, span, h, dh);
                            let vh = head_block(vm, span, h, dh);
                            let go = head_block(&gy, span, h, dh);
                            add_head_block(&mut gv, &p.matmul_at(&go), span, h, dh);
                            let mut ds = go.matmul_bt(&vh);
                            for r in 0..span.len {
                                let prow = p.row(r);
                                let drow = ds.row_mut(r);
                                let dotp: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                                for (d, &pv) in drow.iter_mut().zip(prow) {
                                    *d = pv * (*d - dotp) * scale;
                                }
                            }
                            add_head_block(&mut gq, &ds.matmul(&kh), span, h, dh);
                            add_head_block(&mut gk, &ds.matmul_at(&qh), span, h, dh);
                        }
                    }
                    acc(&mut grads, *q, gq, needs(q));
                    acc(&mut grads, *k, gk, needs(k));
                    acc(&mut grads, *v, gv, needs(v));
                }
                Op::Normalize { x, norms } => {
                    let y = &node.value;
                    let mut g = gy;
                    for (r, &n) in norms.iter().enumerate() {
                        let yr = y.row(r);
                        let gr = g.row_mut(r);
                        let proj: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for (gv, &yv) in gr.iter_mut().zip(yr) {
                            *gv = (*gv - yv * proj) / n;
                        }
                    }
                    acc(&mut grads, *x, g, needs(x));
                }
                Op::NormalizeOr { x, fallback, norms } => {
                    let y = &node.value;
                    let cols = gy.cols();
                    let mut gx = Matrix::zeros(gy.rows(), cols);
                    let mut gf = Matrix::zeros(gy.rows(), cols);
                    for (r, &n) in norms.iter().enumerate() {
                        let gr = gy.row(r);
                        if n > FALLBACK_NORM {
                            let yr = y.row(r);
                            let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((o, &gv), &yv) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                                *o = (gv - yv * proj) / n;
                            }
                        } else {
                            gf.row_mut(r).copy_from_slice(gr);
                        }
                    }
                    acc(&mut grads, *x, gx, needs(x));
                    acc(&mut grads, *fallback, gf, needs(fallback));
                }
                Op::InfoNce { logits, probs } => {
                    let n = probs.rows();
                    let s = gy.get(0, 0) / n as f64;
                    let mut g = probs.scale(s);
                    for i in 0..n {
                        g.set(i, i, g.get(i, i) - s);
                    }
                    acc(&mut grads, *logits, g, needs(logits));
                }
                Op::WeightedSum(terms) => {
                    let s = gy.get(0, 0);
                    for &(v, w) in terms {
                        acc(&mut grads, v, Matrix::scalar(w * s), needs(&v));
                    }
                }
            }
        }
        Gradients(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};


    fn random(rows: usize, cols: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Checks d(root)/d(input) for every entry of `input` by central differences.
    fn check<F>(input: Matrix, build: F)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let x = tape.param(input.clone());
        let root = build(&mut tape, x);
        let grads = tape.backward(root);
        let analytic = grads.get(x).cloned().unwrap_or_else(|| Matrix::zeros(input.rows(), input.cols()));
        let h = 1e-5;
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let mut m = input.clone();
                m.data_mut()[i] += delta;
                let mut t = Tape::new();
                let x = t.param(m);
                let r = build(&mut t, x);
                t.value(r).get(0, 0)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                "entry {i}: analytic {a} numeric {numeric}"
            );
        }
    }

    fn sum_all(tape: &mut Tape, x: Var, weights: &Matrix) -> Var {
        // Reduce to a scalar through a fixed random linear functional.
        let w = tape.constant(weights.clone());
        let prod = tape.matmul_bt(x, w);
        let n = tape.value(prod).rows();
        let ones = tape.constant(Matrix::filled(1, n, 1.0));
        let col = tape.matmul(ones, prod);
        let c = tape.value(col).cols();
        let ones_c = tape.constant(Matrix::filled(c, 1, 1.0));
        tape.matmul(col, ones_c)
    }

    #[test]
    fn layer_norm_and_relu_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let input = random(3, 5, &mut rng);
        let gain = random(1, 5, &mut rng);
        let bias = random(1, 5, &mut rng);
        let w = random(4, 5, &mut rng);
        check(input, |t, x| {
            let g = t.constant(gain.clone());
            let b = t.constant(bias.clone());
            let y = t.layer_norm(x, g, b);
            let y = t.relu(y);
            sum_all(t, y, &w)
        });
    }

    #[test]
    fn attention_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let input = random(5, 4, &mut rng);
        let wq = random(4, 4, &mut rng);
        let wk = random(4, 4, &mut rng);
        let wv = random(4, 4, &mut rng);
        let w = random(3, 4, &mut rng);
        let spans: Rc<[Span]> = vec![Span { start: 0, len: 2 }, Span { start: 2, len: 3 }].into();
        check(input, |t, x| {
            let (a, b, c) = (t.constant(wq.clone()), t.constant(wk.clone()), t.constant(wv.clone()));
            let q = t.matmul(x, a);
            let k = t.matmul(x, b);
            let v = t.matmul(x, c);
            let o = t.attention(q, k, v, spans.clone(), 2);
            sum_all(t, o, &w)
        });
    }

    #[test]
    fn normalize_spmm_and_info_nce_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let input = random(4, 3, &mut rng);
        let targets = random(4, 3, &mut rng);
        let csr = Rc::new(Csr::from_row_entries(
            4,
            vec![vec![(1, 0.5), (2, 0.5)], vec![(0, 1.0)], vec![(3, 0.3), (0, 0.7)], vec![(2, 1.0)]],
        ));
        check(input, |t, x| {
            let tg = t.constant(targets.clone());
            let agg = t.spmm(csr.clone(), x);
            let ctx = t.normalize_or(agg, x);
            let a = t.normalize(x);
            let b = t.normalize(tg);
            let l1 = t.matmul_bt(a, b);
            let l1 = t.scale(l1, 1.0 / 0.3);
            let l2 = t.matmul_bt(ctx, a);
            let e1 = t.info_nce(l1);
            let e2 = t.info_nce(l2);
            t.weighted_sum(vec![(e1, 1.0), (e2, 0.25)])
        });
    }

    #[test]
    fn add_row_gather_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let table = random(6, 3, &mut rng);
        let w = random(5, 3, &mut rng);
        check(table, |t, x| {
            let g = t.gather_rows(x, vec![0, 3, 3, 5, 1]);
            let b = t.gather_rows(x, vec![2]);
            let y = t.add_row(g, b);
            let z = t.add(y, g);
            let z = t.scale(z, 0.5);
            sum_all(t, z, &w)
        });
    }

    #[test]
    fn fallback_routes_gradient_to_own_row() {
        let mut tape = Tape::new();
        let own = tape.param(Matrix::from_rows(&[vec![0.6, 0.8]]));
        let zero = tape.param(Matrix::zeros(1, 2));
        let y = tape.normalize_or(zero, own);
        assert_eq!(tape.value(y).row(0), &[0.6, 0.8]);
        let ones = tape.constant(Matrix::filled(2, 1, 1.0));
        let s = tape.matmul(y, ones);
        let g = tape.backward(s);
        assert_eq!(g.get(own).unwrap().row(0), &[1.0, 1.0]);
        assert_eq!(g.get(zero).unwrap().row(0), &[0.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Matrix::filled(2, 2, 1.0));
        let p = tape.param(Matrix::filled(2, 2, 0.5));
        let m = tape.matmul(c, p);
        let l = tape.info_nce(m);
        let g = tape.backward(l);
        assert!(g.get(c).is_none());
        assert!(g.get(p).is_some());
    }
}
