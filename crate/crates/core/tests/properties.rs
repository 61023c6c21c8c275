use proptest::prelude::*;

use tagad_core::evalkit::{auc, average_precision, roc_points, trapezoid_area};
use tagad_core::graph::{AnomalyTag, InjectionLabel, TagGraph};
use tagad_core::io::{load_dir, save_dataset};

fn graph_strategy() -> impl Strategy<Value = (TagGraph, InjectionLabel)> {
    (1usize..30).prop_flat_map(|n| {
        let texts = prop::collection::vec("[a-zA-Z0-9 .,!?\"\\\\é\t]{0,40}", n);
        let edges = prop::collection::vec((0..n, 0..n), 0..3 * n);
        let tags = prop::collection::vec(0u8..5, n);
        (texts, edges, tags).prop_map(|(texts, edges, tags)| {
            let edges: Vec<(usize, usize)> = edges.into_iter().filter(|(u, v)| u != v).collect();
            let g = TagGraph::new(texts, &edges).unwrap();
            let l = InjectionLabel::from_tags(tags.into_iter().map(|t| AnomalyTag::from_code(t).unwrap()).collect());
            (g, l)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_round_trip((g, l) in graph_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&g, &l, dir.path()).unwrap();
        let ds = load_dir(dir.path()).unwrap();
        prop_assert_eq!(&ds.graph, &g);
        prop_assert_eq!(ds.labels.as_ref(), Some(&l));
        prop_assert!(ds.original_ids.is_none());
    }

    #[test]
    fn adjacency_is_symmetric_and_sorted((g, _) in graph_strategy()) {
        let edges = g.edges();
        for v in 0..g.node_count() {
            let nb = g.neighbors(v);
            prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
            for &u in nb {
                prop_assert!(g.neighbors(u).contains(&v));
            }
            let count = edges.iter().filter(|&&(a, b)| a == v || b == v).count();
            prop_assert_eq!(g.degree(v), count);
            prop_assert_eq!(g.degree(v), nb.len());
        }
    }

    #[test]
    fn auc_invariant_under_monotone_maps(s in prop::collection::vec(-3.0f64..3.0, 4..40), bits in prop::collection::vec(any::<bool>(), 40)) {
        let mut l: Vec<bool> = bits[..s.len()].to_vec();
        l[0] = true;
        l[1] = false;
        let a = auc(&s, &l).unwrap();
        let e: Vec<f64> = s.iter().map(|x| x.exp()).collect();
        let f: Vec<f64> = s.iter().map(|x| 3.0 * x - 7.0).collect();
        prop_assert_eq!(auc(&e, &l).unwrap(), a);
        prop_assert_eq!(auc(&f, &l).unwrap(), a);
    }

    #[test]
    fn auc_of_negated_scores(s in prop::collection::hash_set(-1000i32..1000, 4..40), bits in prop::collection::vec(any::<bool>(), 40)) {
        let s: Vec<f64> = s.into_iter().map(f64::from).collect();
        let mut l: Vec<bool> = bits[..s.len()].to_vec();
        l[0] = true;
        l[1] = false;
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auc(&s, &l).unwrap() + auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ap_bounds_with_positive_first(s in prop::collection::vec(0.0f64..1.0, 3..40), bits in prop::collection::vec(any::<bool>(), 40)) {
        let mut l: Vec<bool> = bits[..s.len()].to_vec();
        let mut s = s;
        let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        s[0] = top + 1.0;
        l[0] = true;
        let positives = l.iter().filter(|&&b| b).count() as f64;
        let prevalence = positives / l.len() as f64;
        prop_assert!(average_precision(&s, &l).unwrap() >= 1.0 / positives - 1e-12);
        let tied = vec![0.5; s.len()];
        prop_assert!((average_precision(&tied, &l).unwrap() - prevalence).abs() < 1e-12);
    }

    #[test]
    fn roc_is_monotone_and_spans_unit_square(s in prop::collection::vec(0i32..8, 2..50), bits in prop::collection::vec(any::<bool>(), 50)) {
        let s: Vec<f64> = s.into_iter().map(f64::from).collect();
        let mut l: Vec<bool> = bits[..s.len()].to_vec();
        l[0] = true;
        l[1] = false;
        let pts = roc_points(&s, &l).unwrap();
        prop_assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        prop_assert!(pts.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        prop_assert!((trapezoid_area(&pts) - auc(&s, &l).unwrap()).abs() < 1e-9);
    }
}

/// A positive ranked first does not by itself lift AP to the prevalence.
#[test]
fn positive_first_can_stay_below_prevalence() {
    let mut l = vec![true];
    l.extend(vec![false; 15]);
    l.extend(vec![true; 14]);
    let s: Vec<f64> = (0..30).map(|i| -(i as f64)).collect();
    let ap = average_precision(&s, &l).unwrap();
    let expect = (1.0 + (2..=15).map(|j| j as f64 / (15 + j) as f64).sum::<f64>()) / 15.0;
    assert!((ap - expect).abs() < 1e-12);
    assert!(ap < 0.5);
}

#[test]
fn empty_graph_files() {
    let dir = tempfile::tempdir().unwrap();
    let g = TagGraph::new(Vec::new(), &[]).unwrap();
    save_dataset(&g, &InjectionLabel::all_normal(0), dir.path()).unwrap();
    for f in ["nodes.jsonl", "edges.tsv"] {
        assert_eq!(std::fs::read_to_string(dir.path().join(f)).unwrap(), "");
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("labels.csv")).unwrap(), "id,label\n");
    let ds = load_dir(dir.path()).unwrap();
    assert_eq!(ds.graph.node_count(), 0);
}
