//! Planting labeled anomalies in a clean graph.
//!
//! Four strategies with `m` targets each: contextual insertion, contextual
//! replacement, cliques, and edges to random non-neighbors with counts drawn
//! from the original degree distribution. Every draw comes from one
//! generator, in this order: insertion targets and candidates, replacement
//! targets and candidates, clique groups, degree-sampled targets.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{AnomalyTag, InjectionLabel, TagGraph};
use crate::linalg::{dot, norm, Matrix};
use crate::rng::{stream, Rng, Stream};

/// Sentences of `text`: a sentence ends at '.', '!' or '?' followed by
/// whitespace or the end of the text. Fragments are trimmed; empty ones are
/// dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_break = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
            if at_break {
                let end = i + c.len_utf8();
                push_fragment(&mut out, &text[start..end]);
                start = end;
            }
        }
    }
    push_fragment(&mut out, &text[start..]);
    out
}

fn push_fragment(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

fn is_terminated(s: &str) -> bool {
    s.ends_with(['.', '!', '?'])
}

/// Joins sentences with single spaces. An unterminated fragment that is
/// followed by another sentence gets a '.' so the result splits back into
/// the same sentences.
pub fn join_sentences(sentences: &[String]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(s);
        if i + 1 < sentences.len() && !is_terminated(s) {
            out.push('.');
        }
    }
    out
}

/// Candidate with the lowest cosine similarity to `target`; ties go to the
/// lowest id.
pub fn pick_dissimilar(target: usize, candidates: &[usize], features: &Matrix) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::validation("pick_dissimilar needs at least one candidate"));
    }
    if let Some(&c) = candidates.iter().find(|&&c| c == target) {
        return Err(Error::validation(format!("candidate {c} is the target itself")));
    }
    let row_norm = |v: usize| {
        let n = norm(features.row(v));
        if n > 0.0 && n.is_finite() {
            Ok(n)
        } else {
            Err(Error::validation(format!("degenerate feature row for node {v}")))
        }
    };
    let tn = row_norm(target)?;
    let mut best: Option<(f64, usize)> = None;
    for &c in candidates {
        let cos = dot(features.row(target), features.row(c)) / (tn * row_norm(c)?);
        best = match best {
            Some((b, id)) if b < cos || (b == cos && id < c) => Some((b, id)),
            _ => Some((cos, c)),
        };
    }
    Ok(best.unwrap().1)
}

/// Inserts a contiguous span of half of the source's sentences (at least
/// one) at a uniformly random sentence boundary of the target.
pub fn inject_contextual_insert(target: &str, source: &str, rng: &mut Rng) -> Result<String> {
    let src = split_sentences(source);
    if src.is_empty() {
        return Err(Error::validation("contextual insert: source text has no sentences"));
    }
    let mut tgt = split_sentences(target);
    let span = (src.len() / 2).max(1);
    let from = rng.gen_range(0..=src.len() - span);
    let at = rng.gen_range(0..=tgt.len());
    tgt.splice(at..at, src[from..from + span].iter().cloned());
    Ok(join_sentences(&tgt))
}

/// Replaces `max(1, ⌊min(|Sᵢ|, |Sⱼ|)/2⌋)` random target sentences by as many
/// distinct random source sentences.
pub fn inject_contextual_replace(target: &str, source: &str, rng: &mut Rng) -> Result<String> {
    let src = split_sentences(source);
    let mut tgt = split_sentences(target);
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::validation("contextual replace: both texts need at least one sentence"));
    }
    let k = (src.len().min(tgt.len()) / 2).max(1);
    let positions = sample(rng, tgt.len(), k);
    let picks = sample(rng, src.len(), k);
    for (p, s) in positions.iter().zip(picks.iter()) {
        tgt[p] = src[s].clone();
    }
    Ok(join_sentences(&tgt))
}

/// Mutable adjacency used while injecting.
#[derive(Debug, Clone)]
pub struct WorkGraph {
    pub texts: Vec<String>,
    pub adj: Vec<BTreeSet<usize>>,
}

impl WorkGraph {
    pub fn from_graph(g: &TagGraph) -> Self {
        WorkGraph {
            texts: g.texts().to_vec(),
            adj: (0..g.node_count()).map(|v| g.neighbors(v).iter().copied().collect()).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.texts.len()
    }

    /// Adds `u–v`; false when it already existed.
    pub fn add_edge(&mut self, u: usize, v: usize) -> bool {
        debug_assert!(u != v);
        let fresh = self.adj[u].insert(v);
        self.adj[v].insert(u);
        fresh
    }

    pub fn into_graph(self) -> TagGraph {
        let adj = self.adj.into_iter().map(|s| s.into_iter().collect()).collect();
        TagGraph::from_adjacency(self.texts, adj)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueGroup {
    pub nodes: Vec<usize>,
    pub pre_existing: usize,
    pub edges_added: usize,
}

/// Draws `m / q` disjoint groups of `q` unlabeled nodes and completes each
/// into a clique, labeling its members.
pub fn inject_cliques(
    work: &mut WorkGraph,
    labels: &mut InjectionLabel,
    m: usize,
    q: usize,
    rng: &mut Rng,
) -> Result<Vec<CliqueGroup>> {
    if q < 2 {
        return Err(Error::config("clique size must be >= 2"));
    }
    let groups = m / q;
    if groups == 0 {
        return Err(Error::config(format!("clique quota {m} is below one group of {q}")));
    }
    let mut out = Vec::with_capacity(groups);
    for _ in 0..groups {
        let free = unlabeled(labels);
        if free.len() < q {
            return Err(Error::validation(format!(
                "not enough unlabeled nodes for a clique of {q}: {} left",
                free.len()
            )));
        }
        let mut nodes: Vec<usize> = sample(rng, free.len(), q).iter().map(|i| free[i]).collect();
        nodes.sort_unstable();
        let mut pre_existing = 0;
        let mut edges_added = 0;
        for (a, &u) in nodes.iter().enumerate() {
            for &v in &nodes[a + 1..] {
                if work.add_edge(u, v) {
                    edges_added += 1;
                } else {
                    pre_existing += 1;
                }
            }
        }
        for &v in &nodes {
            labels.set(v, AnomalyTag::Clique);
        }
        out.push(CliqueGroup { nodes, pre_existing, edges_added });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeDraw {
    pub node: usize,
    pub sampled_degree: usize,
    pub edges_added: usize,
    pub truncated: bool,
}

/// For each of `m` unlabeled targets, draws a degree from `original_degrees`
/// and connects the target to that many random non-neighbors (fewer if not
/// enough exist).
pub fn inject_degree_sampled_edges(
    work: &mut WorkGraph,
    labels: &mut InjectionLabel,
    original_degrees: &[usize],
    m: usize,
    rng: &mut Rng,
) -> Result<Vec<DegreeDraw>> {
    let n = work.node_count();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let free = unlabeled(labels);
        if free.is_empty() {
            return Err(Error::validation("no unlabeled node left for a degree-sampled target"));
        }
        let node = free[rng.gen_range(0..free.len())];
        let sampled_degree = original_degrees[rng.gen_range(0..original_degrees.len())];
        let others: Vec<usize> = (0..n).filter(|&u| u != node && !work.adj[node].contains(&u)).collect();
        let k = sampled_degree.min(others.len());
        for i in sample(rng, others.len(), k).iter() {
            work.add_edge(node, others[i]);
        }
        labels.set(node, AnomalyTag::RandomEdge);
        out.push(DegreeDraw {
            node,
            sampled_degree,
            edges_added: k,
            truncated: k < sampled_degree,
        });
    }
    Ok(out)
}

fn unlabeled(labels: &InjectionLabel) -> Vec<usize> {
    (0..labels.len()).filter(|&v| !labels.tag(v).is_anomaly()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan {
    /// Total budget `4m`.
    pub total: usize,
    pub candidates: usize,
    pub clique_size: usize,
    pub seed: u64,
}

impl InjectionPlan {
    pub fn from_config(cfg: &RunConfig, node_count: usize) -> Self {
        let total = cfg
            .injection
            .total_anomalies
            .unwrap_or_else(|| 4 * ((node_count as f64 * 0.01).round() as usize));
        InjectionPlan {
            total,
            candidates: cfg.injection.candidates,
            clique_size: cfg.injection.clique_size,
            seed: cfg.seed,
        }
    }

    pub fn per_strategy(&self) -> usize {
        self.total / 4
    }

    pub fn validate(&self, node_count: usize) -> Result<()> {
        if !self.total.is_multiple_of(4) {
            return Err(Error::config(format!("anomaly budget {} is not a multiple of 4", self.total)));
        }
        if self.total > node_count {
            return Err(Error::config(format!(
                "anomaly budget {} exceeds node count {node_count}",
                self.total
            )));
        }
        if self.candidates == 0 {
            return Err(Error::config("candidate-set size must be >= 1"));
        }
        if self.clique_size < 2 {
            return Err(Error::config("clique size must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextualKind {
    Insert,
    Replace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualEdit {
    pub kind: ContextualKind,
    pub target: usize,
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCounts {
    pub contextual_insert: usize,
    pub contextual_replace: usize,
    pub clique: usize,
    pub random_edge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub plan: InjectionPlan,
    pub nodes: StrategyCounts,
    /// Structural slots moved from cliques to degree-sampled edges.
    pub clique_remainder: usize,
    pub clique_edges_added: usize,
    pub random_edges_added: usize,
    pub truncations: usize,
    pub contextual: Vec<ContextualEdit>,
    pub cliques: Vec<CliqueGroup>,
    pub degree_draws: Vec<DegreeDraw>,
}

impl InjectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn contextual_pass(
    work: &mut WorkGraph,
    labels: &mut InjectionLabel,
    features: &Matrix,
    kind: ContextualKind,
    m: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<ContextualEdit>> {
    let mut edits = Vec::with_capacity(m);
    let tag = match kind {
        ContextualKind::Insert => AnomalyTag::ContextualInsert,
        ContextualKind::Replace => AnomalyTag::ContextualReplace,
    };
    for _ in 0..m {
        let free = unlabeled(labels);
        let target = free[rng.gen_range(0..free.len())];
        labels.set(target, tag);
        let pool: Vec<usize> = free.into_iter().filter(|&v| v != target).collect();
        let cands: Vec<usize> = sample(rng, pool.len(), k.min(pool.len())).iter().map(|i| pool[i]).collect();
        let source = pick_dissimilar(target, &cands, features)?;
        let (t, s) = (&work.texts[target], &work.texts[source]);
        let text = match kind {
            ContextualKind::Insert => inject_contextual_insert(t, s, rng)?,
            ContextualKind::Replace => inject_contextual_replace(t, s, rng)?,
        };
        work.texts[target] = text;
        edits.push(ContextualEdit { kind, target, source });
    }
    Ok(edits)
}

/// Runs all four strategies on a copy of `graph`. `features` are the frozen
/// features of the clean graph, used to pick dissimilar text sources.
pub fn run_injection(
    graph: &TagGraph,
    plan: &InjectionPlan,
    features: &Matrix,
) -> Result<(TagGraph, InjectionLabel, InjectionReport)> {
    let n = graph.node_count();
    plan.validate(n)?;
    if features.rows() != n {
        return Err(Error::validation(format!(
            "dimension mismatch: {} feature rows for {n} nodes",
            features.rows()
        )));
    }
    let m = plan.per_strategy();
    if m > 0 && n < 2 {
        return Err(Error::validation("contextual injection needs at least 2 nodes"));
    }
    let mut rng = stream(plan.seed, Stream::Injection);
    let mut work = WorkGraph::from_graph(graph);
    let mut labels = InjectionLabel::all_normal(n);
    let original_degrees = graph.degrees();

    let mut contextual = contextual_pass(&mut work, &mut labels, features, ContextualKind::Insert, m, plan.candidates, &mut rng)?;
    contextual.extend(contextual_pass(
        &mut work,
        &mut labels,
        features,
        ContextualKind::Replace,
        m,
        plan.candidates,
        &mut rng,
    )?);

    let groups = m / plan.clique_size;
    let cliques = if groups > 0 {
        inject_cliques(&mut work, &mut labels, m, plan.clique_size, &mut rng)?
    } else {
        Vec::new()
    };
    let remainder = m - groups * plan.clique_size;
    let degree_draws = if m + remainder > 0 {
        inject_degree_sampled_edges(&mut work, &mut labels, &original_degrees, m + remainder, &mut rng)?
    } else {
        Vec::new()
    };

    let h = labels.histogram();
    let report = InjectionReport {
        plan: plan.clone(),
        nodes: StrategyCounts {
            contextual_insert: h[1],
            contextual_replace: h[2],
            clique: h[3],
            random_edge: h[4],
        },
        clique_remainder: remainder,
        clique_edges_added: cliques.iter().map(|c| c.edges_added).sum(),
        random_edges_added: degree_draws.iter().map(|d| d.edges_added).sum(),
        truncations: degree_draws.iter().filter(|d| d.truncated).count(),
        contextual,
        cliques,
        degree_draws,
    };
    Ok((work.into_graph(), labels, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn sentence_split() {
        assert_eq!(split_sentences("A. B! C? d"), s(&["A.", "B!", "C?", "d"]));
        assert_eq!(split_sentences("v1.2 is out. Yes"), s(&["v1.2 is out.", "Yes"]));
        assert!(split_sentences("  ").is_empty());
        assert_eq!(join_sentences(&s(&["a", "b."])), "a. b.");
    }

    #[test]
    fn pick_examples() {
        let f = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(pick_dissimilar(0, &[1], &f).unwrap(), 1);
        assert_eq!(pick_dissimilar(0, &[1, 2], &f).unwrap(), 2);
        let e = pick_dissimilar(0, &[3], &f).unwrap_err();
        assert!(e.to_string().contains("degenerate feature"));
        let t = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]]);
        assert_eq!(pick_dissimilar(0, &[2, 1], &t).unwrap(), 1);
    }

    #[test]
    fn insert_single_sentence() {
        let allowed = ["X. A. B.", "A. X. B.", "A. B. X."];
        let mut seen = BTreeSet::new();
        for seed in 0..40 {
            let out = inject_contextual_insert("A. B.", "X.", &mut rng(seed)).unwrap();
            assert!(allowed.contains(&out.as_str()), "{out}");
            seen.insert(out);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn insert_into_empty() {
        let out = inject_contextual_insert("", "X. Y.", &mut rng(1)).unwrap();
        assert!(out == "X." || out == "Y.");
        assert!(inject_contextual_insert("A.", "", &mut rng(1)).is_err());
    }

    #[test]
    fn insert_preserves_target_order() {
        let src = "S1. S2. S3. S4. S5.";
        let a = inject_contextual_insert("T1. T2. T3.", src, &mut rng(9)).unwrap();
        let b = inject_contextual_insert("T1. T2. T3.", src, &mut rng(9)).unwrap();
        assert_eq!(a, b);
        let sents = split_sentences(&a);
        assert_eq!(sents.len(), 5);
        let kept: Vec<&String> = sents.iter().filter(|x| x.starts_with('T')).collect();
        assert_eq!(kept, vec!["T1.", "T2.", "T3."]);
    }

    #[test]
    fn replace_counts() {
        assert_eq!(inject_contextual_replace("A.", "X.", &mut rng(0)).unwrap(), "X.");
        let out = inject_contextual_replace("A. B. C. D.", "X. Y.", &mut rng(2)).unwrap();
        let sents = split_sentences(&out);
        assert_eq!(sents.len(), 4);
        assert_eq!(sents.iter().filter(|x| x.starts_with(['X', 'Y'])).count(), 1);
        assert!(inject_contextual_replace("", "X.", &mut rng(0)).is_err());
    }

    fn work(n: usize, edges: &[(usize, usize)]) -> (WorkGraph, InjectionLabel) {
        let g = TagGraph::new(vec![String::new(); n], edges).unwrap();
        (WorkGraph::from_graph(&g), InjectionLabel::all_normal(n))
    }

    #[test]
    fn clique_of_two() {
        let (mut w, mut l) = work(2, &[]);
        let g = inject_cliques(&mut w, &mut l, 2, 2, &mut rng(0)).unwrap();
        assert_eq!(g[0].edges_added, 1);
        assert_eq!(l.histogram()[3], 2);
    }

    #[test]
    fn clique_subtracts_existing() {
        let (mut w, mut l) = work(3, &[(0, 1)]);
        let g = inject_cliques(&mut w, &mut l, 3, 3, &mut rng(0)).unwrap();
        assert_eq!((g[0].edges_added, g[0].pre_existing), (2, 1));
    }

    #[test]
    fn singleton_degree_distribution() {
        let (mut w, mut l) = work(6, &[]);
        let d = inject_degree_sampled_edges(&mut w, &mut l, &[1], 3, &mut rng(4)).unwrap();
        assert!(d.iter().all(|x| x.edges_added == 1 && !x.truncated));
    }

    #[test]
    fn saturated_target_truncates() {
        let (mut w, mut l) = work(3, &[(0, 1), (0, 2), (1, 2)]);
        let d = inject_degree_sampled_edges(&mut w, &mut l, &[2], 1, &mut rng(0)).unwrap();
        assert_eq!(d[0].edges_added, 0);
        assert!(d[0].truncated);
    }

    #[test]
    fn empty_budget_is_identity() {
        let g = TagGraph::new(vec!["a.".into(), "b.".into()], &[(0, 1)]).unwrap();
        let plan = InjectionPlan { total: 0, candidates: 50, clique_size: 15, seed: 0 };
        let (g2, l, _) = run_injection(&g, &plan, &Matrix::filled(2, 2, 1.0)).unwrap();
        assert_eq!(g2, g);
        assert_eq!(l, InjectionLabel::all_normal(2));
    }

    #[test]
    fn unit_budget_moves_cliques_to_degree_sampling() {
        let texts: Vec<String> = (0..10).map(|i| format!("t{i} one. t{i} two.")).collect();
        let g = TagGraph::new(texts, &[(0, 1), (2, 3), (4, 5)]).unwrap();
        let f = Matrix::from_rows(&(0..10).map(|i| vec![1.0, i as f64]).collect::<Vec<_>>());
        let plan = InjectionPlan { total: 4, candidates: 50, clique_size: 2, seed: 3 };
        let (_, l, r) = run_injection(&g, &plan, &f).unwrap();
        assert_eq!(l.histogram(), [6, 1, 1, 0, 2]);
        assert_eq!(r.clique_remainder, 1);
    }
}
