//! Classification metrics for propensity models.

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Test,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub split: EvalSplit,
    pub n: usize,
    pub auc: f64,
    pub f1: f64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub pr_curve: Vec<PrPoint>,
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counted ½.
///
/// Counts are kept in integer half-units, so the value is exact up to the
/// final division.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, ModelError> {
    assert_eq!(scores.len(), labels.len());
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(ModelError::SingleClass { positives: pos, negatives: neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut doubled: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        let group_neg = (j - i + 1) as u128 - group_pos;
        doubled += 2 * group_pos * neg_below + group_pos * group_neg;
        neg_below += group_neg;
        i = j + 1;
    }
    Ok(doubled as f64 / (2 * pos as u128 * neg as u128) as f64)
}

pub fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Precision and recall at every distinct score threshold, descending.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Vec<PrPoint> {
    let (pos, _) = class_counts(labels);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(PrPoint { threshold: t, recall: ratio(tp, pos), precision: ratio(tp, tp + fp) });
    }
    out
}

pub fn evaluate_scores(scores: &[f64], labels: &[u8], split: EvalSplit) -> Result<ModelScore, ModelError> {
    let auc = auc(scores, labels)?;
    let confusion = confusion_at(scores, labels, THRESHOLD);
    Ok(ModelScore {
        split,
        n: scores.len(),
        auc,
        f1: confusion.f1(),
        threshold: THRESHOLD,
        confusion,
        pr_curve: pr_curve(scores, labels),
    })
}
