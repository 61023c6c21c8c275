//! Text-attributed graph and ground-truth anomaly labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable simple undirected graph whose nodes carry raw text.
///
/// Adjacency is stored in compressed sparse form; every neighbor list is
/// sorted ascending and the structure is symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    texts: Vec<String>,
}

impl TagGraph {
    /// Builds a graph from an edge list. Reversed and repeated edges collapse
    /// to one undirected edge; self-loops and out-of-range ids are rejected.
    pub fn new(texts: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = texts.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u == v {
                return Err(Error::validation(format!("self-loop on node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::validation(format!(
                    "node id out of range: edge ({u}, {v}) with {n} nodes"
                )));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        Ok(Self::from_adjacency(texts, adj))
    }

    /// `adj` must already be symmetric and loop-free; lists are sorted and
    /// deduplicated here.
    pub(crate) fn from_adjacency(texts: Vec<String>, mut adj: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(adj.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        TagGraph {
            offsets,
            neighbors,
            texts,
        }
    }

    pub fn node_count(&self) -> usize {
        self.texts.len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn text(&self, v: usize) -> &str {
        &self.texts[v]
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    /// Edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 0..self.node_count() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|v| self.degree(v)).collect()
    }
}

/// Ground-truth tag of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum AnomalyTag {
    Normal = 0,
    ContextualInsert = 1,
    ContextualReplace = 2,
    Clique = 3,
    RandomEdge = 4,
}

impl AnomalyTag {
    pub const ALL: [AnomalyTag; 5] = [
        AnomalyTag::Normal,
        AnomalyTag::ContextualInsert,
        AnomalyTag::ContextualReplace,
        AnomalyTag::Clique,
        AnomalyTag::RandomEdge,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_anomaly(self) -> bool {
        self != AnomalyTag::Normal
    }

    pub fn is_contextual(self) -> bool {
        matches!(self, AnomalyTag::ContextualInsert | AnomalyTag::ContextualReplace)
    }

    pub fn is_structural(self) -> bool {
        matches!(self, AnomalyTag::Clique | AnomalyTag::RandomEdge)
    }
}

/// Per-node ground-truth tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionLabel {
    tags: Vec<AnomalyTag>,
}

impl InjectionLabel {
    pub fn all_normal(n: usize) -> Self {
        InjectionLabel {
            tags: vec![AnomalyTag::Normal; n],
        }
    }

    pub fn from_tags(tags: Vec<AnomalyTag>) -> Self {
        InjectionLabel { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tag(&self, v: usize) -> AnomalyTag {
        self.tags[v]
    }

    pub fn tags(&self) -> &[AnomalyTag] {
        &self.tags
    }

    pub(crate) fn set(&mut self, v: usize, tag: AnomalyTag) {
        self.tags[v] = tag;
    }

    pub fn binary(&self) -> Vec<bool> {
        self.tags.iter().map(|t| t.is_anomaly()).collect()
    }

    /// Count of nodes per tag code 0..=4.
    pub fn histogram(&self) -> [usize; 5] {
        let mut h = [0; 5];
        for t in &self.tags {
            h[t.code() as usize] += 1;
        }
        h
    }
}
