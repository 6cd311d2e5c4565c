//! Slow, independent reference implementations used to validate the fast
//! paths.
//!
//! Everything here is deliberately written from first principles: walks
//! are enumerated one step at a time instead of taken from matrix powers,
//! the transition matrix is assembled entry by entry from those counts,
//! and ROC-AUC is the O(n^2) count of concordant pairs. None of it shares
//! code with the production implementations, so agreement between the two
//! is meaningful. Keep it that way.

use crate::graph::{DenseMatrix, Graph};

/// Counts length-`l` walks from `from` to `to` by recursive enumeration.
///
/// A walk may revisit nodes and edges freely; only its length is fixed.
pub fn count_walks(graph: &Graph, from: usize, to: usize, l: usize) -> u64 {
    let n = graph.num_nodes();
    let mut neighbors = vec![Vec::new(); n];
    for &(u, v) in graph.edges() {
        neighbors[u].push(v);
        if u != v {
            neighbors[v].push(u);
        }
    }
    fn rec(neighbors: &[Vec<usize>], at: usize, to: usize, left: usize) -> u64 {
        if left == 0 {
            return (at == to) as u64;
        }
        neighbors[at]
            .iter()
            .map(|&next| rec(neighbors, next, to, left - 1))
            .sum()
    }
    rec(&neighbors, from, to, l)
}

/// Full matrix of length-`l` walk counts, one enumeration per entry.
pub fn walk_count_matrix(graph: &Graph, l: usize) -> DenseMatrix {
    let n = graph.num_nodes();
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, count_walks(graph, i, j, l) as f64);
        }
    }
    m
}

/// Row-normalized transition matrix built straight from enumerated walk
/// counts: entry (i, j) is the weighted number of walks from i to j of
/// length at most `max_len`, divided by the weighted total leaving i.
///
/// `weights[l]` multiplies the length-`l` counts. Rows whose total is zero
/// (impossible for nonnegative weights with `weights[0] > 0`, since every
/// node reaches itself in zero steps) are left as zeros.
pub fn transition_matrix(graph: &Graph, weights: &[f64]) -> DenseMatrix {
    let n = graph.num_nodes();
    let mut raw = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut sum = 0.0;
            for (l, &w) in weights.iter().enumerate() {
                sum += w * count_walks(graph, i, j, l) as f64;
            }
            raw.set(i, j, sum);
        }
    }
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let total: f64 = raw.row(i).iter().sum();
        if total > 0.0 {
            for j in 0..n {
                out.set(i, j, raw.get(i, j) / total);
            }
        }
    }
    out
}

/// Symmetrically normalized variant of [`transition_matrix`]: the raw
/// weighted walk matrix scaled by the inverse square root of its row sums
/// on both sides.
pub fn symmetric_transition_matrix(graph: &Graph, weights: &[f64]) -> DenseMatrix {
    let n = graph.num_nodes();
    let mut raw = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut sum = 0.0;
            for (l, &w) in weights.iter().enumerate() {
                sum += w * count_walks(graph, i, j, l) as f64;
            }
            raw.set(i, j, sum);
        }
    }
    let totals: Vec<f64> = (0..n).map(|i| raw.row(i).iter().sum()).collect();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if totals[i] > 0.0 && totals[j] > 0.0 {
                out.set(i, j, raw.get(i, j) / (totals[i].sqrt() * totals[j].sqrt()));
            }
        }
    }
    out
}

/// ROC-AUC as the probability that a uniformly random positive scores
/// above a uniformly random negative, counting score ties as half.
///
/// This is the textbook O(n_pos * n_neg) definition. Panics if either
/// class is empty; callers are expected to have checked.
pub fn auc_by_pair_counting(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let mut concordant = 0.0;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                concordant += 1.0;
            } else if scores[i] == scores[j] {
                concordant += 0.5;
            }
        }
    }
    assert!(pairs > 0, "need at least one positive and one negative");
    concordant / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walks_on_a_path_of_three() {
        // 0 - 1 - 2. Two-step walks from 0: back to 0 via 1, or on to 2.
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(count_walks(&g, 0, 0, 2), 1);
        assert_eq!(count_walks(&g, 0, 2, 2), 1);
        assert_eq!(count_walks(&g, 0, 1, 2), 0);
        assert_eq!(count_walks(&g, 1, 1, 2), 2);
    }

    #[test]
    fn a_self_loop_counts_as_one_step() {
        let g = Graph::from_edges(1, &[(0, 0)]).unwrap();
        assert_eq!(count_walks(&g, 0, 0, 0), 1);
        assert_eq!(count_walks(&g, 0, 0, 1), 1);
        assert_eq!(count_walks(&g, 0, 0, 5), 1);
    }

    #[test]
    fn transition_rows_sum_to_one() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let m = transition_matrix(&g, &[1.0, 0.5, 0.25]);
        for i in 0..4 {
            let s: f64 = m.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_counting_auc_handles_ties() {
        let scores = [0.2, 0.2, 0.9];
        let labels = [false, true, true];
        // Pairs: (pos 0.2 vs neg 0.2) ties for 0.5, (pos 0.9 vs neg 0.2) wins.
        assert_eq!(auc_by_pair_counting(&scores, &labels), 0.75);
    }

    #[test]
    fn perfect_and_inverted_rankings() {
        let labels = [false, false, true, true];
        assert_eq!(auc_by_pair_counting(&[0.1, 0.2, 0.8, 0.9], &labels), 1.0);
        assert_eq!(auc_by_pair_counting(&[0.9, 0.8, 0.2, 0.1], &labels), 0.0);
    }
}
