//! Evaluation metrics. Currently just ROC-AUC, computed from ranks.

use crate::error::{Error, Result};

/// Area under the ROC curve via the rank-sum statistic.
///
/// Equal to the probability that a random positive outranks a random
/// negative, with ties worth one half. Tied scores share their average
/// rank, which makes this agree exactly (not just approximately) with
/// counting concordant pairs: both reduce to the same U / (n_pos * n_neg)
/// ratio, and U is a sum of halves, representable exactly in f64 at any
/// realistic n.
///
/// Scores may be probabilities or raw logits; any strictly increasing
/// transform leaves the result unchanged.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their average.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}
