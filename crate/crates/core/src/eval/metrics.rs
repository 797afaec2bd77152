//! Classification metrics.

use crate::error::{Error, Result};

/// Unweighted mean of per-class F1 over `0..num_classes`.
///
/// A class with no true and no predicted members scores 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::contract(format!(
            "macro_f1: {} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if labels.is_empty() || num_classes == 0 {
        return Err(Error::contract("macro_f1 needs at least one sample and class"));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::validation(format!(
                "class index out of range: pred {p}, label {l}"
            )));
        }
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[l] += 1;
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

/// Mann-Whitney AUC of `scores` for the positive set; ties count one half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average 1-based ranks across tie groups.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// One-vs-rest AUC averaged over classes that have both positives and
/// negatives in `labels`. `scores` holds one row of `num_classes` per sample.
pub fn macro_auc(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "macro_auc: {} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != num_classes) {
        return Err(Error::shape("macro_auc", &[num_classes], &[row.len()]));
    }
    let mut aucs = Vec::new();
    for c in 0..num_classes {
        let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if let Some(a) = binary_auc(&col, &pos) {
            aucs.push(a);
        }
    }
    if aucs.is_empty() {
        return Err(Error::UndefinedMetric(
            "macro AUC: no class has both positive and negative samples".into(),
        ));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}
