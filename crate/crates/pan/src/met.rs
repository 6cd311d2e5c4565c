//! Maximal entropy transition (MET) matrices.
//!
//! The MET matrix aggregates adjacency powers up to a cutoff L, weighting
//! each path length l by a positive factor w[l], then normalizes by the
//! per-node partition values Z_i (the row sums of the weighted sum). Its
//! diagonal ranks nodes by participation in short closed walks and drives
//! pooling.

use crate::error::{Error, Result};
use crate::graph::{DenseMatrix, Graph};

/// How the weighted walk matrix S is normalized into a transition operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Z^{-1} S: every row sums to one.
    RowStochastic,
    /// Z^{-1/2} S Z^{-1/2}: symmetric, similar to the row-stochastic form.
    Symmetric,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Symmetric
    }
}

/// Per-length path weights w[0..=L], stored as unconstrained logs.
///
/// The log parametrization keeps every weight strictly positive no matter
/// what an optimizer does to the underlying values; fixed Boltzmann
/// weights and trained weights share the same representation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathWeights {
    log_w: Vec<f64>,
    trainable: bool,
    temperature: f64,
}

impl PathWeights {
    /// Boltzmann weights w[l] = exp(-l/T) for l = 0..=L, with E(l) = l.
    pub fn boltzmann(cutoff: usize, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(temperature));
        }
        let log_w = (0..=cutoff).map(|l| -(l as f64) / temperature).collect();
        Ok(PathWeights {
            log_w,
            trainable: false,
            temperature,
        })
    }

    /// Same initialization as [`PathWeights::boltzmann`] but flagged
    /// trainable, so a model enrolls the logs as parameters.
    pub fn trainable(cutoff: usize, temperature: f64) -> Result<Self> {
        let mut w = PathWeights::boltzmann(cutoff, temperature)?;
        w.trainable = true;
        Ok(w)
    }

    /// Wraps stored log-weights, e.g. values loaded from a checkpoint.
    pub fn from_log_weights(log_w: &[f64]) -> Self {
        assert!(!log_w.is_empty(), "need at least w[0]");
        PathWeights {
            log_w: log_w.to_vec(),
            trainable: false,
            temperature: 1.0,
        }
    }

    /// Wraps explicit positive weights. Panics on a nonpositive entry;
    /// this constructor is for tests and demos, not untrusted input.
    pub fn from_weights(weights: &[f64]) -> Self {
        assert!(!weights.is_empty(), "need at least w[0]");
        let log_w = weights
            .iter()
            .map(|&w| {
                assert!(w > 0.0, "path weights must be positive, got {w}");
                w.ln()
            })
            .collect();
        PathWeights {
            log_w,
            trainable: false,
            temperature: 1.0,
        }
    }

    /// Maximal path length L.
    pub fn cutoff(&self) -> usize {
        self.log_w.len() - 1
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// The weights themselves, w[l] = exp(log_w[l]).
    pub fn weights(&self) -> Vec<f64> {
        self.log_w.iter().map(|&t| t.exp()).collect()
    }

    /// Unconstrained log-weights; this is what training updates.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_w
    }

    pub fn set_log_weights(&mut self, log_w: &[f64]) {
        assert_eq!(log_w.len(), self.log_w.len());
        self.log_w.copy_from_slice(log_w);
    }
}

/// A normalized MET matrix together with the pieces layers consume.
#[derive(Debug, Clone, PartialEq)]
pub struct MetMatrix {
    pub m: DenseMatrix,
    pub diag: Vec<f64>,
    pub normalization: Normalization,
    /// Per-node partition values Z_i (row sums of the weighted walk sum).
    pub z: Vec<f64>,
}

/// S = Σ_l w[l] · powers[l].
pub fn weighted_power_sum(powers: &[DenseMatrix], w: &[f64]) -> DenseMatrix {
    assert_eq!(powers.len(), w.len(), "one weight per power");
    let mut s = DenseMatrix::zeros(powers[0].rows(), powers[0].cols());
    for (p, &wl) in powers.iter().zip(w) {
        s.add_scaled(p, wl);
    }
    s
}

/// Left and right diagonal scalings that turn S into the normalized M:
/// M[i][j] = left[i] · S[i][j] · right[j].
///
/// RowStochastic uses (1/Z_i, 1); Symmetric uses (Z_i^{-1/2}, Z_j^{-1/2}).
/// Every Z_i must be positive, which holds whenever w[0] > 0 since A^0
/// contributes w[0] to each row; a zero is reported rather than trusted.
pub fn normalization_scalings(
    z: &[f64],
    normalization: Normalization,
) -> Result<(Vec<f64>, Vec<f64>)> {
    for (node, &zi) in z.iter().enumerate() {
        if !(zi > 0.0) {
            return Err(Error::ZeroPartition { node });
        }
    }
    Ok(match normalization {
        Normalization::RowStochastic => {
            (z.iter().map(|&zi| 1.0 / zi).collect(), vec![1.0; z.len()])
        }
        Normalization::Symmetric => {
            let inv_sqrt: Vec<f64> = z.iter().map(|&zi| 1.0 / zi.sqrt()).collect();
            (inv_sqrt.clone(), inv_sqrt)
        }
    })
}

/// Applies precomputed scalings; shared by the plain and tape paths.
pub fn scale_rows_cols(s: &DenseMatrix, left: &[f64], right: &[f64]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(s.rows(), s.cols());
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            m.set(i, j, left[i] * s.get(i, j) * right[j]);
        }
    }
    m
}

/// Builds the MET matrix of a graph.
pub fn met_matrix(
    g: &Graph,
    weights: &PathWeights,
    normalization: Normalization,
) -> Result<MetMatrix> {
    if g.num_nodes() == 0 {
        return Err(Error::EmptyGraph);
    }
    let powers = g.adjacency_powers(weights.cutoff())?;
    let s = weighted_power_sum(&powers, &weights.weights());
    let z = s.row_sums();
    let (left, right) = normalization_scalings(&z, normalization)?;
    let m = scale_rows_cols(&s, &left, &right);
    let diag = m.diagonal();
    Ok(MetMatrix {
        m,
        diag,
        normalization,
        z,
    })
}

/// Diagonal of the MET matrix: the walk-based centrality used for pooling.
pub fn met_diag(met: &MetMatrix) -> Vec<f64> {
    met.diag.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use rand::Rng;

    const TOL: f64 = 1e-10;

    #[test]
    fn boltzmann_weights_at_unit_temperature() {
        let w = PathWeights::boltzmann(2, 1.0).unwrap().weights();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w[2] - (-2.0f64).exp()).abs() < 1e-15);
        assert!((w[1] - 0.367879).abs() < 1e-6);
        assert!((w[2] - 0.135335).abs() < 1e-6);
    }

    #[test]
    fn boltzmann_cutoff_zero_is_unit_weight() {
        for t in [0.1, 1.0, 100.0] {
            assert_eq!(PathWeights::boltzmann(0, t).unwrap().weights(), vec![1.0]);
        }
    }

    #[test]
    fn high_temperature_flattens_weights() {
        let w = PathWeights::boltzmann(1, 1e12).unwrap().weights();
        assert!((w[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_temperature_is_rejected() {
        assert!(matches!(
            PathWeights::boltzmann(2, 0.0),
            Err(Error::NonPositiveTemperature(_))
        ));
        assert!(matches!(
            PathWeights::boltzmann(2, -1.0),
            Err(Error::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn cutoff_zero_gives_identity_under_both_normalizations() {
        let g = crate::testutil::random_graph(&mut crate::testutil::rng(3), 6);
        let w = PathWeights::boltzmann(0, 1.0).unwrap();
        for norm in [Normalization::RowStochastic, Normalization::Symmetric] {
            let met = met_matrix(&g, &w, norm).unwrap();
            let eye = DenseMatrix::identity(g.num_nodes());
            assert!(met.m.max_abs_diff(&eye) < TOL);
            assert!(met_diag(&met).iter().all(|&d| (d - 1.0).abs() < TOL));
        }
    }

    #[test]
    fn k3_row_stochastic_rows_sum_to_one_with_equal_diagonal() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let w = PathWeights::boltzmann(2, 1.0).unwrap();
        let met = met_matrix(&g, &w, Normalization::RowStochastic).unwrap();
        for i in 0..3 {
            let s: f64 = met.m.row(i).iter().sum();
            assert!((s - 1.0).abs() < TOL);
        }
        assert!((met.diag[0] - met.diag[1]).abs() < TOL);
        assert!((met.diag[1] - met.diag[2]).abs() < TOL);
        let oracle = reference::transition_matrix(&g, &w.weights());
        assert!(met.m.max_abs_diff(&oracle) < TOL);
    }

    #[test]
    fn p2_symmetric_met_is_all_halves() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let w = PathWeights::from_weights(&[1.0, 1.0]);
        let met = met_matrix(&g, &w, Normalization::Symmetric).unwrap();
        assert_eq!(met.z, vec![2.0, 2.0]);
        let expect = DenseMatrix::from_vec(2, 2, vec![0.5, 0.5, 0.5, 0.5]);
        assert!(met.m.max_abs_diff(&expect) < TOL);
        assert!((met.diag[0] - 0.5).abs() < TOL);
        assert!((met.diag[1] - 0.5).abs() < TOL);
    }

    #[test]
    fn star_center_outranks_leaves() {
        // Star with center 0 and three leaves: the center closes three
        // 2-walks, each leaf only one, and normalization keeps the gap.
        let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let w = PathWeights::from_weights(&[1.0, 1.0, 1.0]);
        let met = met_matrix(&g, &w, Normalization::RowStochastic).unwrap();
        let d = met_diag(&met);
        for leaf in 1..4 {
            assert!(d[0] > d[leaf], "center {} vs leaf {}", d[0], d[leaf]);
        }
    }

    #[test]
    fn matches_walk_enumeration_oracle() {
        let mut rng = crate::testutil::rng(17);
        for _ in 0..30 {
            let g = crate::testutil::random_graph(&mut rng, 8);
            let cutoff = rng.gen_range(0..=4usize);
            let raw: Vec<f64> = (0..=cutoff).map(|_| rng.gen_range(0.05..2.0)).collect();
            let w = PathWeights::from_weights(&raw);
            let row = met_matrix(&g, &w, Normalization::RowStochastic).unwrap();
            let slow_row = reference::transition_matrix(&g, &raw);
            assert!(row.m.max_abs_diff(&slow_row) < TOL);
            let sym = met_matrix(&g, &w, Normalization::Symmetric).unwrap();
            let slow_sym = reference::symmetric_transition_matrix(&g, &raw);
            assert!(sym.m.max_abs_diff(&slow_sym) < TOL);
            assert!(sym.m.is_symmetric(TOL));
        }
    }

    #[test]
    fn relabeling_nodes_permutes_the_matrix() {
        let mut rng = crate::testutil::rng(23);
        for _ in 0..20 {
            let g = crate::testutil::random_graph(&mut rng, 7);
            let n = g.num_nodes();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let w = PathWeights::boltzmann(3, 1.0).unwrap();
            for norm in [Normalization::RowStochastic, Normalization::Symmetric] {
                let before = met_matrix(&g, &w, norm).unwrap();
                let after = met_matrix(&g.permuted(&perm), &w, norm).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        let diff = (after.m.get(perm[i], perm[j]) - before.m.get(i, j)).abs();
                        assert!(diff < TOL);
                    }
                }
            }
        }
    }

    #[test]
    fn diag_field_mirrors_matrix_diagonal() {
        let g = crate::testutil::random_graph(&mut crate::testutil::rng(9), 6);
        let w = PathWeights::boltzmann(2, 0.7).unwrap();
        let met = met_matrix(&g, &w, Normalization::Symmetric).unwrap();
        for i in 0..g.num_nodes() {
            assert_eq!(met.diag[i], met.m.get(i, i));
        }
    }
}
