//! Browser demo: generate a planted-anomaly graph, detect anomalies in it,
//! and explore how the temperature shapes the contrastive loss.
//!
//! Every export returns a JSON string; `www/index.html` draws the results.

use std::cell::RefCell;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use tagad_core::config::RunConfig;
use tagad_core::evalkit::evaluate;
use tagad_core::featurizer::hashed_features;
use tagad_core::objective::info_nce;
use tagad_core::linalg::Matrix;
use tagad_core::pipeline::inject;
use tagad_core::scorer::{embed_graph, score_embeddings};
use tagad_core::synthgen::{generate, SynthSpec};
use tagad_core::trainer::train;
use tagad_core::{InjectionLabel, TagGraph};

struct Loaded {
    graph: TagGraph,
    labels: InjectionLabel,
    communities: usize,
    seed: u64,
}

thread_local! {
    static STATE: RefCell<Option<Loaded>> = const { RefCell::new(None) };
}

/// Small model that trains in a few seconds in a browser.
fn demo_config(seed: u64, epochs: usize, rounds: usize) -> RunConfig {
    RunConfig {
        embed_dim: 32,
        text_width: 32,
        text_heads: 4,
        text_layers: 1,
        max_len: 48,
        vocab_size: 2048,
        feature_dim: 128,
        batch_size: 64,
        learning_rate: 2e-3,
        epochs,
        rounds,
        seed,
        ..RunConfig::default()
    }
}

fn err(e: impl std::fmt::Display) -> String {
    json!({ "error": e.to_string() }).to_string()
}

pub fn generate_graph_json(nodes: usize, communities: usize, anomalies: usize, clique: usize, seed: u64) -> String {
    let spec = SynthSpec {
        nodes,
        communities,
        p_in: (12.0 / (nodes as f64 / communities as f64)).min(1.0),
        p_out: 0.002,
        seed,
        ..SynthSpec::default()
    };
    let clean = match generate(&spec) {
        Ok(g) => g,
        Err(e) => return err(e),
    };
    let mut cfg = demo_config(seed, 0, 1);
    cfg.injection.total_anomalies = Some(anomalies);
    cfg.injection.clique_size = clique;
    let (graph, labels, report) = match inject(&clean, &cfg) {
        Ok(r) => r,
        Err(e) => return err(e),
    };
    let out = json!({
        "nodes": graph.node_count(),
        "communities": (0..graph.node_count()).map(|v| spec.community(v)).collect::<Vec<_>>(),
        "edges": graph.edges(),
        "labels": labels.tags().iter().map(|t| t.code()).collect::<Vec<_>>(),
        "texts": graph.texts(),
        "histogram": labels.histogram(),
        "clique_edges": report.clique_edges_added,
        "random_edges": report.random_edges_added,
    });
    STATE.with(|s| *s.borrow_mut() = Some(Loaded { graph, labels, communities, seed }));
    out.to_string()
}

pub fn detect_json(epochs: usize, rounds: usize) -> String {
    STATE.with(|s| {
        let state = s.borrow();
        let Some(st) = state.as_ref() else {
            return err("generate a graph first");
        };
        let cfg = demo_config(st.seed, epochs, rounds);
        let features = hashed_features(&st.graph, cfg.vocab_size, cfg.feature_dim, cfg.seed);
        let trained = match train(&st.graph, &features, &cfg) {
            Ok(t) => t,
            Err(e) => return err(e),
        };
        let scores = match embed_graph(&trained.model, &st.graph, &features, &cfg)
            .and_then(|emb| score_embeddings(&emb, &cfg, rounds))
        {
            Ok(s) => s,
            Err(e) => return err(e),
        };
        let values: Vec<f64> = scores.iter().map(|r| r.score).collect();
        let report = match evaluate(&values, &st.labels) {
            Ok(r) => r,
            Err(e) => return err(e),
        };
        json!({
            "scores": values,
            "auc": report.auc,
            "ap": report.ap,
            "contextual_auc": report.contextual_auc,
            "structural_auc": report.structural_auc,
            "roc": report.roc.iter().map(|p| [p.fpr, p.tpr]).collect::<Vec<_>>(),
            "loss": trained.log.iter().map(|e| e.loss).collect::<Vec<_>>(),
            "communities": st.communities,
        })
        .to_string()
    })
}

/// InfoNCE of an `n × n` logit matrix with cosine `pos` on the diagonal and
/// `neg` elsewhere, for a log-spaced grid of temperatures.
pub fn temperature_curve_json(pos: f64, neg: f64, n: usize) -> String {
    if n < 2 {
        return err("need at least 2 nodes per batch");
    }
    let points: Vec<Value> = (0..60)
        .map(|k| {
            let tau = 10f64.powf(-2.0 + 2.0 * k as f64 / 59.0);
            let mut m = Matrix::filled(n, n, neg / tau);
            for i in 0..n {
                m.set(i, i, pos / tau);
            }
            json!([tau, info_nce(&m)])
        })
        .collect();
    json!({ "points": points, "uniform": (n as f64).ln() }).to_string()
}

#[wasm_bindgen]
pub fn generate_graph(nodes: usize, communities: usize, anomalies: usize, clique: usize, seed: u32) -> String {
    generate_graph_json(nodes, communities, anomalies, clique, seed as u64)
}

#[wasm_bindgen]
pub fn detect(epochs: usize, rounds: usize) -> String {
    detect_json(epochs, rounds)
}

#[wasm_bindgen]
pub fn temperature_curve(pos: f64, neg: f64, n: usize) -> String {
    temperature_curve_json(pos, neg, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn generate_then_detect() {
        let g = parse(&generate_graph_json(120, 3, 8, 2, 1));
        assert_eq!(g["nodes"], 120);
        assert_eq!(g["labels"].as_array().unwrap().len(), 120);
        let d = parse(&detect_json(1, 4));
        let auc = d["auc"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&auc));
        assert_eq!(d["scores"].as_array().unwrap().len(), 120);
    }

    #[test]
    fn bad_inputs_report_errors() {
        assert!(parse(&generate_graph_json(2, 4, 0, 2, 0))["error"].is_string());
        assert!(parse(&temperature_curve_json(0.9, 0.1, 1))["error"].is_string());
    }

    #[test]
    fn temperature_limits() {
        let v = parse(&temperature_curve_json(0.5, 0.5, 8));
        for p in v["points"].as_array().unwrap() {
            assert!((p[1].as_f64().unwrap() - 8f64.ln()).abs() < 1e-9);
        }
        let v = parse(&temperature_curve_json(1.0, 0.0, 8));
        let pts = v["points"].as_array().unwrap();
        assert!(pts[0][1].as_f64().unwrap() < 1e-3);
    }
}
