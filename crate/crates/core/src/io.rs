//! Dataset files.
//!
//! A dataset directory holds `nodes.jsonl` (`{"id": .., "text": ..}` per
//! line), `edges.tsv` (`u<TAB>v` per line) and optionally `labels.csv`
//! (header `id,label`). Ids in the files may be arbitrary integers; they are
//! remapped to dense ids `0..n` in ascending order of the original id, and
//! the mapping can be written out as `idmap.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AnomalyTag, InjectionLabel, TagGraph};

pub const NODES_FILE: &str = "nodes.jsonl";
pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.csv";
pub const IDMAP_FILE: &str = "idmap.csv";
pub const FEATURES_FILE: &str = "features.tsv";

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    id: i64,
    text: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: TagGraph,
    pub labels: Option<InjectionLabel>,
    /// `original_ids[dense]`, present when the file ids were not already
    /// `0..n`.
    pub original_ids: Option<Vec<i64>>,
}

struct IdMap {
    dense: BTreeMap<i64, usize>,
    remapped: bool,
}

impl IdMap {
    fn lookup(&self, id: i64) -> Result<usize> {
        self.dense.get(&id).copied().ok_or_else(|| {
            Error::validation(format!(
                "node id out of range: {id} (graph has {} nodes)",
                self.dense.len()
            ))
        })
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_nodes(path: &Path) -> Result<(Vec<String>, IdMap, Vec<i64>)> {
    let src = read(path)?;
    let mut by_id: BTreeMap<i64, String> = BTreeMap::new();
    for (lineno, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: NodeRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        if by_id.insert(rec.id, rec.text).is_some() {
            return Err(Error::parse(path, lineno + 1, format!("duplicate node id {}", rec.id)));
        }
    }
    let n = by_id.len();
    let remapped = by_id.keys().enumerate().any(|(i, &id)| id != i as i64);
    let original: Vec<i64> = by_id.keys().copied().collect();
    let dense = original.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let texts = by_id.into_values().collect::<Vec<_>>();
    debug_assert_eq!(texts.len(), n);
    Ok((texts, IdMap { dense, remapped }, original))
}

fn parse_id(path: &Path, lineno: usize, tok: &str) -> Result<i64> {
    tok.trim()
        .parse::<i64>()
        .map_err(|_| Error::parse(path, lineno, format!("invalid node id {tok:?}")))
}

fn parse_edges(path: &Path, ids: &IdMap) -> Result<Vec<(usize, usize)>> {
    let src = read(path)?;
    let mut edges = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(path, lineno, "expected two node ids"));
        };
        let (a, b) = (parse_id(path, lineno, a)?, parse_id(path, lineno, b)?);
        if a == b {
            return Err(Error::validation(format!("self-loop on node {a} ({}:{lineno})", path.display())));
        }
        edges.push((ids.lookup(a)?, ids.lookup(b)?));
    }
    Ok(edges)
}

fn parse_labels(path: &Path, ids: &IdMap) -> Result<InjectionLabel> {
    let src = read(path)?;
    let mut lines = src.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id,label" => {}
        _ => return Err(Error::parse(path, 1, "expected header `id,label`")),
    }
    let n = ids.dense.len();
    let mut tags: Vec<Option<AnomalyTag>> = vec![None; n];
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path, lineno, "expected `id,label`"))?;
        let v = ids.lookup(parse_id(path, lineno, id)?)?;
        let tag = label
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(AnomalyTag::from_code)
            .ok_or_else(|| Error::parse(path, lineno, format!("label must be 0..=4, got {label:?}")))?;
        if tags[v].replace(tag).is_some() {
            return Err(Error::parse(path, lineno, "duplicate label row"));
        }
    }
    let tags = tags
        .into_iter()
        .enumerate()
        .map(|(v, t)| t.ok_or_else(|| Error::validation(format!("node {v} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(InjectionLabel::from_tags(tags))
}

/// Loads and validates a dataset from explicit file paths.
pub fn load_dataset(nodes: &Path, edges: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let (texts, ids, original) = parse_nodes(nodes)?;
    let edge_list = parse_edges(edges, &ids)?;
    let labels = labels.map(|p| parse_labels(p, &ids)).transpose()?;
    let graph = TagGraph::new(texts, &edge_list)?;
    Ok(Dataset {
        graph,
        labels,
        original_ids: ids.remapped.then_some(original),
    })
}

/// Loads `nodes.jsonl`, `edges.tsv` and, when present, `labels.csv` from `dir`.
pub fn load_dir(dir: &Path) -> Result<Dataset> {
    let labels = dir.join(LABELS_FILE);
    load_dataset(
        &dir.join(NODES_FILE),
        &dir.join(EDGES_FILE),
        labels.exists().then_some(labels.as_path()),
    )
}

/// Writes the three dataset files into `out_dir`, creating it if needed.
pub fn save_dataset(graph: &TagGraph, labels: &InjectionLabel, out_dir: &Path) -> Result<()> {
    if labels.len() != graph.node_count() {
        return Err(Error::validation("label count does not match node count"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut nodes = String::new();
    for (id, text) in graph.texts().iter().enumerate() {
        let rec = NodeRecord {
            id: id as i64,
            text: text.clone(),
        };
        nodes.push_str(&serde_json::to_string(&rec)?);
        nodes.push('\n');
    }
    write(&out_dir.join(NODES_FILE), &nodes)?;

    let mut edges = String::new();
    for (u, v) in graph.edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    write(&out_dir.join(EDGES_FILE), &edges)?;
    write_labels(labels, &out_dir.join(LABELS_FILE))
}

pub fn write_labels(labels: &InjectionLabel, path: &Path) -> Result<()> {
    let mut out = String::from("id,label\n");
    for (id, t) in labels.tags().iter().enumerate() {
        let _ = writeln!(out, "{id},{}", t.code());
    }
    write(path, &out)
}

pub fn load_labels(path: &Path, node_count: usize) -> Result<InjectionLabel> {
    let ids = IdMap {
        dense: (0..node_count).map(|i| (i as i64, i)).collect(),
        remapped: false,
    };
    parse_labels(path, &ids)
}

pub fn write_idmap(original_ids: &[i64], path: &Path) -> Result<()> {
    let mut out = String::from("original_id,dense_id\n");
    for (dense, orig) in original_ids.iter().enumerate() {
        let _ = writeln!(out, "{orig},{dense}");
    }
    write(path, &out)
}

/// Reads a tab-separated dense matrix, one row per line.
pub fn read_matrix_tsv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let src = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split('\t')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, i + 1, format!("invalid number {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, i + 1, "non-finite entry"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_matrix_tsv<'a>(rows: impl Iterator<Item = &'a [f64]>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push('\t');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    write(path, &out)
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    write(path, contents)
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, nodes: &str, edges: &str) {
        fs::write(dir.join(NODES_FILE), nodes).unwrap();
        fs::write(dir.join(EDGES_FILE), edges).unwrap();
    }

    #[test]
    fn dedups_symmetric_edges() {
        let dir = tempfile::tempdir().unwrap();
        write_files(
            dir.path(),
            "{\"id\":0,\"text\":\"a\"}\n{\"id\":1,\"text\":\"b\"}\n{\"id\":2,\"text\":\"\"}\n",
            "0 1\n1 0\n",
        );
        let ds = load_dir(dir.path()).unwrap();
        assert_eq!(ds.graph.node_count(), 3);
        assert_eq!(ds.graph.edge_count(), 1);
        assert!(ds.original_ids.is_none());
        assert!(ds.labels.is_none());
    }

    #[test]
    fn self_loop_error() {
        let dir = tempfile::tempdir().unwrap();
        let nodes: String = (0..6).map(|i| format!("{{\"id\":{i},\"text\":\"\"}}\n")).collect();
        write_files(dir.path(), &nodes, "5\t5\n");
        let err = load_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("self-loop"), "{err}");
    }

    #[test]
    fn out_of_range_error() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "{\"id\":0,\"text\":\"\"}\n{\"id\":1,\"text\":\"\"}\n", "0\t7\n");
        let err = load_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("node id out of range"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "{\"id\":0,\"text\":\"\"}\n{\"id\":1,\"text\":\"\"}\n", "0\t1\n1 x\n");
        match load_dir(dir.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn sparse_ids_are_remapped() {
        let dir = tempfile::tempdir().unwrap();
        write_files(
            dir.path(),
            "{\"id\":40,\"text\":\"x\"}\n{\"id\":7,\"text\":\"y\"}\n",
            "40\t7\n",
        );
        let ds = load_dir(dir.path()).unwrap();
        assert_eq!(ds.original_ids.as_deref(), Some(&[7, 40][..]));
        assert_eq!(ds.graph.text(0), "y");
        assert_eq!(ds.graph.edge_count(), 1);
        let p = dir.path().join(IDMAP_FILE);
        write_idmap(ds.original_ids.as_ref().unwrap(), &p).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "original_id,dense_id\n7,0\n40,1\n");
    }

    #[test]
    fn empty_graph_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = TagGraph::new(vec![], &[]).unwrap();
        save_dataset(&g, &InjectionLabel::all_normal(0), dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join(NODES_FILE)).unwrap(), "");
        assert_eq!(fs::read_to_string(dir.path().join(EDGES_FILE)).unwrap(), "");
        assert_eq!(fs::read_to_string(dir.path().join(LABELS_FILE)).unwrap(), "id,label\n");
        let ds = load_dir(dir.path()).unwrap();
        assert_eq!(ds.graph, g);
    }

    #[test]
    fn bad_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "{\"id\":0,\"text\":\"\"}\n", "");
        fs::write(dir.path().join(LABELS_FILE), "id,label\n0,9\n").unwrap();
        assert!(load_dir(dir.path()).is_err());
    }

    #[test]
    fn matrix_tsv_rejects_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.tsv");
        fs::write(&p, "1\t2\nNaN\t0\n").unwrap();
        let err = read_matrix_tsv(&p).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }
}
