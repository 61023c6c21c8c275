//! Ranking metrics: ROC AUC, average precision, per-type AUC and ROC export.
//!
//! Tied scores form one group. AUC gives tied positive/negative pairs half
//! credit; AP evaluates precision once per group, so an all-tied ranking
//! scores exactly the prevalence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AnomalyTag, InjectionLabel};

/// Distinct-score groups in descending score order: `(score, positives, negatives)`.
fn groups(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, usize, usize)>> {
    if scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::validation(format!("non-finite score at index {i}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let s = scores[i];
        match out.last_mut() {
            Some(g) if g.0 == s => {
                if labels[i] {
                    g.1 += 1;
                } else {
                    g.2 += 1;
                }
            }
            _ => out.push((s, labels[i] as usize, !labels[i] as usize)),
        }
    }
    Ok(out)
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let p = labels.iter().filter(|&&l| l).count();
    (p, labels.len() - p)
}

/// Mann–Whitney AUC.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(Error::validation("auc undefined: labels contain a single class"));
    }
    let mut neg_below = n;
    let mut credit = 0.0;
    for (_, gp, gn) in groups(scores, labels)? {
        neg_below -= gn;
        credit += gp as f64 * neg_below as f64 + 0.5 * (gp * gn) as f64;
    }
    Ok(credit / (p as f64 * n as f64))
}

pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, _) = class_counts(labels);
    if p == 0 {
        return Err(Error::validation("average precision undefined: no positives"));
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut sum = 0.0;
    for (_, gp, gn) in groups(scores, labels)? {
        tp += gp;
        seen += gp + gn;
        sum += gp as f64 * tp as f64 / seen as f64;
    }
    Ok(sum / p as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Nodes scoring at least this are flagged; `None` for the origin.
    pub threshold: Option<f64>,
}

pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(Error::validation("roc undefined: labels contain a single class"));
    }
    let mut pts = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: None }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (s, gp, gn) in groups(scores, labels)? {
        tp += gp;
        fp += gn;
        pts.push(RocPoint {
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
            threshold: Some(s),
        });
    }
    Ok(pts)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// AUC over normals plus the nodes whose tag satisfies `keep`.
fn masked_auc(scores: &[f64], labels: &InjectionLabel, keep: fn(AnomalyTag) -> bool) -> Option<f64> {
    let (s, l): (Vec<f64>, Vec<bool>) = labels
        .tags()
        .iter()
        .zip(scores)
        .filter(|(t, _)| !t.is_anomaly() || keep(**t))
        .map(|(t, &s)| (s, t.is_anomaly()))
        .unzip();
    auc(&s, &l).ok()
}

/// `(contextual, structural)` AUCs, each with the other type masked out.
pub fn per_type_auc(scores: &[f64], labels: &InjectionLabel) -> Result<(Option<f64>, Option<f64>)> {
    if scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok((
        masked_auc(scores, labels, AnomalyTag::is_contextual),
        masked_auc(scores, labels, AnomalyTag::is_structural),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub ap: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub contextual_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub structural_auc: Option<f64>,
    pub positives: usize,
    pub nodes: usize,
    pub roc: Vec<RocPoint>,
}

pub fn evaluate(scores: &[f64], labels: &InjectionLabel) -> Result<EvalReport> {
    let binary = labels.binary();
    let (contextual_auc, structural_auc) = per_type_auc(scores, labels)?;
    Ok(EvalReport {
        auc: auc(scores, &binary)?,
        ap: average_precision(scores, &binary)?,
        contextual_auc,
        structural_auc,
        positives: binary.iter().filter(|&&b| b).count(),
        nodes: binary.len(),
        roc: roc_points(scores, &binary)?,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.roc {
            match p.threshold {
                Some(t) => out.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, t)),
                None => out.push_str(&format!("{},{},inf\n", p.fpr, p.tpr)),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const L: [bool; 4] = [true, false, true, false];
    const S: [f64; 4] = [0.9, 0.8, 0.7, 0.1];

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0; 4], &L).unwrap(), 0.5);
        assert_eq!(auc(&S, &L).unwrap(), 0.75);
        let e = auc(&[1.0, 2.0], &[true, true]).unwrap_err();
        assert!(e.to_string().contains("undefined"));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[3.0, 2.0, 1.0, 0.0], &[false, false, false, true]).unwrap(), 0.25);
        assert!((average_precision(&S, &L).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.0; 4], &[false, true, false, false]).unwrap(), 0.25);
        assert!(average_precision(&[0.0], &[false]).is_err());
    }

    #[test]
    fn roc_examples() {
        let p = roc_points(&[2.0, 1.0], &[true, false]).unwrap();
        let xy: Vec<(f64, f64)> = p.iter().map(|q| (q.fpr, q.tpr)).collect();
        assert_eq!(xy, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        let p = roc_points(&[0.3; 5], &[true, false, false, true, false]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(trapezoid_area(&p), 0.5);
    }

    #[test]
    fn per_type_masking() {
        use AnomalyTag::*;
        let labels = InjectionLabel::from_tags(vec![Normal, ContextualInsert, Normal, ContextualReplace]);
        let (c, s) = per_type_auc(&[0.1, 0.9, 0.2, 0.8], &labels).unwrap();
        assert_eq!(c, Some(1.0));
        assert_eq!(s, None);
        let labels = InjectionLabel::from_tags(vec![Normal, ContextualInsert, Clique, RandomEdge, Normal]);
        assert_eq!(per_type_auc(&[1.0; 5], &labels).unwrap(), (Some(0.5), Some(0.5)));
    }

    #[test]
    fn report_serialization() {
        let labels = InjectionLabel::from_tags(vec![AnomalyTag::Normal, AnomalyTag::Clique]);
        let r = evaluate(&[0.0, 1.0], &labels).unwrap();
        let json = r.to_json();
        assert!(json.contains("\"auc\": 1.0"));
        assert!(!json.contains("contextual_auc"));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.roc_csv(), "fpr,tpr,threshold\n0,0,inf\n0,1,1\n1,1,0\n");
    }
}
