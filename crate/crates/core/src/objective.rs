//! Contrastive views and the joint objective.
//!
//! A view pairs an anchor table with a target table; row `i` of its logit
//! matrix holds `⟨anchorᵢ, targetⱼ⟩ / τ` and the diagonal is the positive
//! pair. Cross-modal views anchor on the graph side, uni-modal views on the
//! node scale.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::config::{RunConfig, ViewSet};
use crate::encoders::{EmbeddingTable, Embeddings};
use crate::error::{Error, Result};
use crate::linalg::{logsumexp, Matrix};

/// One of the four embedding tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TableId {
    TextNode,
    TextCtx,
    GraphNode,
    GraphCtx,
}

impl TableId {
    pub fn select(self, e: &Embeddings) -> &EmbeddingTable {
        match self {
            TableId::TextNode => &e.text_node,
            TableId::TextCtx => &e.text_ctx,
            TableId::GraphNode => &e.graph_node,
            TableId::GraphCtx => &e.graph_ctx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    G2tNn,
    G2tCc,
    G2tNc,
    G2tCn,
    T2t,
    G2g,
}

impl View {
    pub const ALL: [View; 6] = [View::G2tNn, View::G2tCc, View::G2tNc, View::G2tCn, View::T2t, View::G2g];

    pub fn tables(self) -> (TableId, TableId) {
        use TableId::*;
        match self {
            View::G2tNn => (GraphNode, TextNode),
            View::G2tCc => (GraphCtx, TextCtx),
            View::G2tNc => (GraphNode, TextCtx),
            View::G2tCn => (GraphCtx, TextNode),
            View::T2t => (TextNode, TextCtx),
            View::G2g => (GraphNode, GraphCtx),
        }
    }

    pub fn is_cross(self) -> bool {
        !matches!(self, View::T2t | View::G2g)
    }

    pub fn name(self) -> &'static str {
        match self {
            View::G2tNn => "g2t-nn",
            View::G2tCc => "g2t-cc",
            View::G2tNc => "g2t-nc",
            View::G2tCn => "g2t-cn",
            View::T2t => "t2t-nc",
            View::G2g => "g2g-nc",
        }
    }
}

/// A view as used by the objective: direction and weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub view: View,
    /// Anchors and targets swapped.
    pub mirrored: bool,
    pub weight: f64,
}

impl ViewSpec {
    pub fn tables(&self) -> (TableId, TableId) {
        let (a, t) = self.view.tables();
        if self.mirrored {
            (t, a)
        } else {
            (a, t)
        }
    }
}

/// Views enabled by `set`, with weight 1 for cross-modal and `gamma` for
/// uni-modal views; `symmetric` appends every view's mirror.
pub fn view_specs(set: ViewSet, symmetric: bool, gamma: f64) -> Vec<ViewSpec> {
    let keep = |v: View| match set {
        ViewSet::Full => true,
        ViewSet::Cross => v.is_cross(),
        ViewSet::CrossInner => matches!(v, View::G2tNn | View::G2tCc),
    };
    let base: Vec<ViewSpec> = View::ALL
        .into_iter()
        .filter(|&v| keep(v))
        .map(|view| ViewSpec {
            view,
            mirrored: false,
            weight: if view.is_cross() { 1.0 } else { gamma },
        })
        .collect();
    let mut out = base.clone();
    if symmetric {
        out.extend(base.into_iter().map(|s| ViewSpec { mirrored: true, ..s }));
    }
    out
}

pub fn config_views(cfg: &RunConfig) -> Vec<ViewSpec> {
    view_specs(cfg.views, cfg.symmetric_views, cfg.gamma)
}

/// `anchors · targetsᵀ / τ`.
pub fn similarity_matrix(anchors: &Matrix, targets: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau > 0.0) {
        return Err(Error::config(format!("tau must be > 0, got {tau}")));
    }
    Ok(anchors.matmul_bt(targets).scale(1.0 / tau))
}

/// Mean over rows of `logsumexp(row) − row[i]`.
pub fn info_nce(logits: &Matrix) -> f64 {
    let n = logits.rows();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| {
            let row = logits.row(i);
            logsumexp(row) - row[i]
        })
        .sum();
    total / n as f64
}

/// Logit matrices of every view for one batch.
#[derive(Debug, Clone)]
pub struct ViewBundle {
    pub views: Vec<(ViewSpec, Matrix)>,
}

impl ViewBundle {
    pub fn get(&self, view: View) -> Option<&Matrix> {
        self.views
            .iter()
            .find(|(s, _)| s.view == view && !s.mirrored)
            .map(|(_, m)| m)
    }
}

fn check_distinct(batch: &[usize]) -> Result<()> {
    let mut sorted = batch.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::validation("duplicate node id in batch"));
    }
    Ok(())
}

/// Builds the given views over the rows `batch` of the four tables.
pub fn build_views_with(
    batch: &[usize],
    tables: &Embeddings,
    tau: f64,
    specs: &[ViewSpec],
) -> Result<ViewBundle> {
    check_distinct(batch)?;
    let rows = |t: TableId| t.select(tables).matrix.gather_rows(batch);
    let gathered = [
        TableId::TextNode,
        TableId::TextCtx,
        TableId::GraphNode,
        TableId::GraphCtx,
    ]
    .map(|t| (t, rows(t)));
    let lookup = |t: TableId| &gathered.iter().find(|(id, _)| *id == t).unwrap().1;
    let views = specs
        .iter()
        .map(|s| {
            let (a, t) = s.tables();
            similarity_matrix(lookup(a), lookup(t), tau).map(|m| (*s, m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewBundle { views })
}

/// The six views with weights `(1, 1, 1, 1, γ, γ)`.
pub fn build_views(batch: &[usize], tables: &Embeddings, tau: f64, gamma: f64) -> Result<ViewBundle> {
    build_views_with(batch, tables, tau, &view_specs(ViewSet::Full, false, gamma))
}

/// `Σ weight · info_nce` over the bundle.
pub fn joint_loss(bundle: &ViewBundle) -> f64 {
    bundle.views.iter().map(|(s, m)| s.weight * info_nce(m)).sum()
}

/// Per-batch rows of the four tables, as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct TapeTables {
    pub text_node: Var,
    pub text_ctx: Var,
    pub graph_node: Var,
    pub graph_ctx: Var,
}

impl TapeTables {
    fn get(&self, t: TableId) -> Var {
        match t {
            TableId::TextNode => self.text_node,
            TableId::TextCtx => self.text_ctx,
            TableId::GraphNode => self.graph_node,
            TableId::GraphCtx => self.graph_ctx,
        }
    }
}

/// Differentiable joint loss over batch-aligned rows.
pub fn tape_joint_loss(tape: &mut Tape, tables: &TapeTables, tau: f64, specs: &[ViewSpec]) -> Var {
    let terms = specs
        .iter()
        .map(|s| {
            let (a, t) = s.tables();
            let sim = tape.matmul_bt(tables.get(a), tables.get(t));
            let logits = tape.scale(sim, 1.0 / tau);
            (tape.info_nce(logits), s.weight)
        })
        .collect();
    tape.weighted_sum(terms)
}
