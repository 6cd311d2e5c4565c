//! Forward definitions of the model's building blocks, expressed over
//! tape tensors so gradients compose: categorical encoders, PANConv,
//! PANPool (score, select, gate), PANLump, mean readout, and the MLP head.
//!
//! Functions here take already-enrolled parameter tensors; owning and
//! enrolling parameters is the model's job.

use crate::error::{Error, Result};
use crate::graph::{CodeMatrix, Graph};
use crate::met::{self, Normalization, PathWeights};
use crate::tape::{BnStats, Tape, Tensor};
use std::rc::Rc;

/// Per-length path weights as seen by a forward pass: either fixed values
/// or an enrolled tensor of log-weights.
pub enum ConvWeights<'a> {
    Fixed(&'a PathWeights),
    Trainable { log_w: &'a Tensor },
}

/// MET matrix lifted onto the tape. With fixed weights both tensors are
/// constants; with trainable weights gradients reach the log-weights
/// through the weighted power sum, while the normalization stays frozen.
pub struct MetOnTape {
    pub m: Tensor,
    pub diag: Tensor,
}

/// Capture-then-replay store for the normalization partition z of the
/// trainable MET route.
///
/// The tape treats z as a constant of the forward pass, so the function
/// it differentiates holds z at the recorded value. A finite-difference
/// probe of that gradient must evaluate the same function: capture the
/// partitions on the base forward, then replay them under perturbation.
pub struct ZPins {
    store: Vec<Vec<f64>>,
    cursor: usize,
    replaying: bool,
}

impl ZPins {
    pub fn new() -> ZPins {
        ZPins {
            store: Vec::new(),
            cursor: 0,
            replaying: false,
        }
    }

    /// Switches to replay mode; every later forward consumes the captured
    /// sequence from the start. Call again before each perturbed forward.
    pub fn rewind(&mut self) {
        self.replaying = true;
        self.cursor = 0;
    }

    fn resolve(&mut self, computed: Vec<f64>) -> Result<Vec<f64>> {
        if !self.replaying {
            self.store.push(computed.clone());
            return Ok(computed);
        }
        let pinned = self.store.get(self.cursor).cloned().ok_or_else(|| {
            Error::ShapeMismatch {
                op: "frozen_z",
                detail: "perturbed forward built more MET matrices than were captured".into(),
            }
        })?;
        self.cursor += 1;
        if pinned.len() != computed.len() {
            // A length change means the pooled node set changed size under
            // the perturbation; the caller is probing across a selection
            // boundary. Equal-size set flips are not detected here, but
            // they surface as step-size-dependent finite differences.
            return Err(Error::ShapeMismatch {
                op: "frozen_z",
                detail: format!(
                    "pinned partition has {} entries, forward needs {}; node selection moved",
                    pinned.len(),
                    computed.len()
                ),
            });
        }
        Ok(pinned)
    }
}

impl Default for ZPins {
    fn default() -> Self {
        ZPins::new()
    }
}

/// Builds the MET matrix of `g` on the tape.
///
/// The trainable path reproduces the plain construction exactly when the
/// log-weights hold the same values; a unit test pins that equivalence.
pub fn met_on_tape(
    tape: &mut Tape,
    g: &Graph,
    weights: &ConvWeights,
    normalization: Normalization,
) -> Result<MetOnTape> {
    met_on_tape_pinned(tape, g, weights, normalization, None)
}

/// [`met_on_tape`] with an optional pin store for the partition vector;
/// see [`ZPins`].
pub fn met_on_tape_pinned(
    tape: &mut Tape,
    g: &Graph,
    weights: &ConvWeights,
    normalization: Normalization,
    pins: Option<&mut ZPins>,
) -> Result<MetOnTape> {
    if g.num_nodes() == 0 {
        return Err(Error::EmptyGraph);
    }
    match weights {
        ConvWeights::Fixed(w) => {
            let met = met::met_matrix(g, w, normalization)?;
            let n = g.num_nodes();
            Ok(MetOnTape {
                m: Tensor::constant(&met.m),
                diag: Tensor::constant_vec(n, 1, met.diag),
            })
        }
        ConvWeights::Trainable { log_w } => {
            let cutoff = log_w.cols() - 1;
            let powers = Rc::new(g.adjacency_powers(cutoff)?);
            let w = tape.exp(log_w)?;
            let s = tape.weighted_mat_sum(&w, &powers)?;
            let n = g.num_nodes();
            let mut z: Vec<f64> = (0..n)
                .map(|i| s.data()[i * n..(i + 1) * n].iter().sum())
                .collect();
            if let Some(pins) = pins {
                z = pins.resolve(z)?;
            }
            let (left, right) = met::normalization_scalings(&z, normalization)?;
            let m = tape.frozen_norm(&s, &left, &right)?;
            let diag = tape.diag(&m)?;
            Ok(MetOnTape { m, diag })
        }
    }
}

/// Sum of per-field embedding rows; the standard categorical encoder.
pub fn encode(tape: &mut Tape, tables: &[Tensor], codes: &CodeMatrix) -> Result<Tensor> {
    tape.embedding_sum(tables, codes)
}

/// PANConv: M · X · W.
pub fn pan_conv(tape: &mut Tape, met: &MetOnTape, x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let xw = tape.matmul(x, w)?;
    tape.matmul(&met.m, &xw)
}

/// Pooling score: X·p + beta * diag(M).
pub fn pan_pool_score(
    tape: &mut Tape,
    x: &Tensor,
    p: &Tensor,
    beta: &Tensor,
    met_diag: &Tensor,
) -> Result<Tensor> {
    let xp = tape.matmul(x, p)?;
    let centrality = tape.scale(met_diag, beta)?;
    tape.add(&xp, &centrality)
}

/// Result of top-K node selection.
pub struct PoolOutcome {
    /// Induced subgraph on the kept nodes, relabeled consecutively.
    pub graph: Graph,
    /// Kept-node features gated by sigmoid(score), K x d.
    pub xp: Tensor,
    /// Kept original indices, ascending.
    pub kept: Vec<usize>,
}

/// Number of nodes kept when pooling `n` nodes at `ratio`.
pub fn pool_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).ceil() as usize).max(1)
}

/// Keeps the K = max(1, ceil(ratio*n)) highest-scoring nodes, ties broken
/// by lower index, and gates their features by sigmoid(score).
///
/// Selection itself is piecewise constant; the sigmoid gate is what lets
/// gradients reach the score parameters.
pub fn pan_pool_select(
    tape: &mut Tape,
    g: &Graph,
    x: &Tensor,
    score: &Tensor,
    ratio: f64,
) -> Result<PoolOutcome> {
    assert!(ratio > 0.0 && ratio <= 1.0, "pool ratio must be in (0, 1], got {ratio}");
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    if score.rows() != n || score.cols() != 1 || x.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "pan_pool_select",
            detail: format!(
                "score {}x{}, features {}x{} for {n} nodes",
                score.rows(),
                score.cols(),
                x.rows(),
                x.cols()
            ),
        });
    }
    let k = pool_size(n, ratio);
    let values = score.data();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();

    let graph = g.induced_subgraph(&kept);
    let xk = tape.row_gather(x, &kept)?;
    let sk = tape.row_gather(score, &kept)?;
    let gate = tape.sigmoid(&sk)?;
    let xp = tape.row_scale(&xk, &gate)?;
    Ok(PoolOutcome { graph, xp, kept })
}

/// Parameters of the lump MLP {D, 2D, D}: linear, batch norm, ReLU,
/// linear.
pub struct LumpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// The pre-MLP part of PANLump: (1 + eps) * Xnode plus the sum of
/// incident edge embeddings. Nodes without edges aggregate exactly zero.
pub fn lump_pre(
    tape: &mut Tape,
    g: &Graph,
    xnode: &Tensor,
    xedge: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    if xnode.rows() != g.num_nodes() || xnode.cols() != xedge.cols() {
        return Err(Error::ShapeMismatch {
            op: "lump_pre",
            detail: format!(
                "node {}x{}, edge {}x{} for graph with {} nodes",
                xnode.rows(),
                xnode.cols(),
                xedge.rows(),
                xedge.cols(),
                g.num_nodes()
            ),
        });
    }
    let scaled = tape.scale_const(xnode, 1.0 + eps)?;
    let agg = tape.edge_to_node_sum(xedge, g.edges(), g.num_nodes())?;
    tape.add(&scaled, &agg)
}

/// The lump MLP over a stack of node rows. Batch-norm statistics pool
/// over every row passed in, so batched training concatenates the
/// per-graph pre-MLP stacks before calling this.
pub fn lump_mlp(
    tape: &mut Tape,
    pre: &Tensor,
    params: &LumpParams,
    stats: &mut BnStats,
    train: bool,
) -> Result<Tensor> {
    let lin1 = tape.matmul(pre, &params.w1)?;
    let lin1 = tape.add_bias(&lin1, &params.b1)?;
    let norm = tape.batch_norm(&lin1, &params.gamma, &params.beta, stats, train)?;
    let act = tape.relu(&norm)?;
    let lin2 = tape.matmul(&act, &params.w2)?;
    tape.add_bias(&lin2, &params.b2)
}

/// Single-graph PANLump: MLP[(1 + eps) X(u) + sum of incident h(u, v)].
pub fn pan_lump(
    tape: &mut Tape,
    g: &Graph,
    xnode: &Tensor,
    xedge: &Tensor,
    eps: f64,
    params: &LumpParams,
    stats: &mut BnStats,
    train: bool,
) -> Result<Tensor> {
    let pre = lump_pre(tape, g, xnode, xedge, eps)?;
    lump_mlp(tape, &pre, params, stats, train)
}

/// Column-wise mean over node rows: the graph-level representation.
pub fn mean_readout(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    tape.column_mean(x)
}

/// Parameters of the classification head {d, d/2, 1} with ReLU.
pub struct HeadParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// logit = W2 · relu(W1 · x + b1) + b2, for a 1 x d input row.
pub fn mlp_head(tape: &mut Tape, x: &Tensor, params: &HeadParams) -> Result<Tensor> {
    let hidden = tape.matmul(x, &params.w1)?;
    let hidden = tape.add_bias(&hidden, &params.b1)?;
    let act = tape.relu(&hidden)?;
    let out = tape.matmul(&act, &params.w2)?;
    tape.add_bias(&out, &params.b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DenseMatrix;
    use crate::tape::BN_EPS;

    const TOL: f64 = 1e-12;

    fn assert_close(actual: &[f64], expect: &[f64], tol: f64) {
        assert_eq!(actual.len(), expect.len());
        for (a, e) in actual.iter().zip(expect) {
            assert!((a - e).abs() < tol, "{actual:?} vs {expect:?}");
        }
    }

    #[test]
    fn encode_single_field_lookup() {
        let mut tape = Tape::new();
        let table = tape.leaf_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let codes = CodeMatrix::from_rows(&[vec![0]]);
        let out = encode(&mut tape, &[table], &codes).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);
    }

    #[test]
    fn encode_zero_tables_give_zero_rows() {
        let mut tape = Tape::new();
        let t0 = tape.leaf_vec(3, 4, vec![0.0; 12]);
        let t1 = tape.leaf_vec(2, 4, vec![0.0; 8]);
        let codes = CodeMatrix::from_rows(&[vec![2, 1], vec![0, 0]]);
        let out = encode(&mut tape, &[t0, t1], &codes).unwrap();
        assert_eq!(out.data(), &[0.0; 8]);
    }

    #[test]
    fn encode_sums_across_fields() {
        let mut tape = Tape::new();
        let t0 = tape.leaf_vec(2, 1, vec![1.0, 2.0]);
        let t1 = tape.leaf_vec(2, 1, vec![10.0, 20.0]);
        let codes = CodeMatrix::from_rows(&[vec![1, 0]]);
        let out = encode(&mut tape, &[t0, t1], &codes).unwrap();
        assert_eq!(out.data(), &[12.0]);
    }

    #[test]
    fn conv_with_cutoff_zero_and_identity_weight_is_identity() {
        let g = crate::testutil::random_graph(&mut crate::testutil::rng(1), 5);
        let n = g.num_nodes();
        let w = PathWeights::boltzmann(0, 1.0).unwrap();
        let mut tape = Tape::new();
        let met = met_on_tape(&mut tape, &g, &ConvWeights::Fixed(&w), Normalization::Symmetric).unwrap();
        let x = tape.leaf_vec(n, 2, (0..2 * n).map(|i| i as f64 - 3.0).collect());
        let eye = tape.leaf(&DenseMatrix::identity(2));
        let out = pan_conv(&mut tape, &met, &x, &eye).unwrap();
        assert_close(out.data(), x.data(), TOL);
    }

    #[test]
    fn conv_on_p2_symmetric_averages() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let w = PathWeights::from_weights(&[1.0, 1.0]);
        let mut tape = Tape::new();
        let met = met_on_tape(&mut tape, &g, &ConvWeights::Fixed(&w), Normalization::Symmetric).unwrap();
        let x = tape.leaf_vec(2, 1, vec![2.0, 0.0]);
        let wmat = tape.leaf_vec(1, 1, vec![1.0]);
        let out = pan_conv(&mut tape, &met, &x, &wmat).unwrap();
        assert_close(out.data(), &[1.0, 1.0], 1e-10);
    }

    #[test]
    fn row_stochastic_conv_preserves_constant_rows() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let w = PathWeights::boltzmann(2, 1.0).unwrap();
        let mut tape = Tape::new();
        let met = met_on_tape(&mut tape, &g, &ConvWeights::Fixed(&w), Normalization::RowStochastic).unwrap();
        let x = tape.leaf_vec(3, 2, vec![0.7, -0.2].repeat(3));
        let wmat = tape.leaf_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let out = pan_conv(&mut tape, &met, &x, &wmat).unwrap();
        for i in 1..3 {
            assert_close(
                &out.data()[i * 2..(i + 1) * 2],
                &out.data()[..2],
                1e-10,
            );
        }
    }

    #[test]
    fn trainable_and_fixed_met_agree_in_value() {
        let mut rng = crate::testutil::rng(2);
        for _ in 0..10 {
            let g = crate::testutil::random_graph(&mut rng, 7);
            let w = PathWeights::boltzmann(3, 0.8).unwrap();
            for norm in [Normalization::RowStochastic, Normalization::Symmetric] {
                let mut tape = Tape::new();
                let fixed = met_on_tape(&mut tape, &g, &ConvWeights::Fixed(&w), norm).unwrap();
                let log_w = tape.leaf_vec(1, 4, w.log_weights().to_vec());
                let trained =
                    met_on_tape(&mut tape, &g, &ConvWeights::Trainable { log_w: &log_w }, norm)
                        .unwrap();
                assert_close(trained.m.data(), fixed.m.data(), 1e-12);
                assert_close(trained.diag.data(), fixed.diag.data(), 1e-12);
            }
        }
    }

    #[test]
    fn score_reduces_to_centrality_when_p_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf_vec(2, 2, vec![3.0, 1.0, -2.0, 0.5]);
        let p = tape.leaf_vec(2, 1, vec![0.0, 0.0]);
        let beta = tape.leaf_vec(1, 1, vec![1.0]);
        let diag = Tensor::constant_vec(2, 1, vec![0.4, 0.6]);
        let score = pan_pool_score(&mut tape, &x, &p, &beta, &diag).unwrap();
        assert_close(score.data(), &[0.4, 0.6], TOL);
    }

    #[test]
    fn score_reduces_to_projection_when_beta_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf_vec(2, 2, vec![1.0, 1.0, 2.0, 2.0]);
        let p = tape.leaf_vec(2, 1, vec![1.0, 1.0]);
        let beta = tape.leaf_vec(1, 1, vec![0.0]);
        let diag = Tensor::constant_vec(2, 1, vec![0.9, 0.9]);
        let score = pan_pool_score(&mut tape, &x, &p, &beta, &diag).unwrap();
        assert_close(score.data(), &[2.0, 4.0], TOL);
    }

    #[test]
    fn score_scales_centrality_by_beta() {
        let mut tape = Tape::new();
        let x = tape.leaf_vec(2, 2, vec![0.0; 4]);
        let p = tape.leaf_vec(2, 1, vec![0.3, -0.7]);
        let beta = tape.leaf_vec(1, 1, vec![2.0]);
        let diag = Tensor::constant_vec(2, 1, vec![0.5, 0.5]);
        let score = pan_pool_score(&mut tape, &x, &p, &beta, &diag).unwrap();
        assert_close(score.data(), &[1.0, 1.0], TOL);
    }

    #[test]
    fn full_ratio_pooling_keeps_the_graph() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let score = tape.leaf_vec(4, 1, vec![0.3, -0.1, 0.8, 0.0]);
        let out = pan_pool_select(&mut tape, &g, &x, &score, 1.0).unwrap();
        assert_eq!(out.kept, vec![0, 1, 2, 3]);
        assert_eq!(out.graph, g);
    }

    #[test]
    fn pooling_a_five_node_path_at_point_eight() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf_vec(5, 1, vec![0.0; 5]);
        let score = tape.leaf_vec(5, 1, vec![5.0, 4.0, 3.0, 2.0, 1.0]);
        let out = pan_pool_select(&mut tape, &g, &x, &score, 0.8).unwrap();
        assert_eq!(out.kept, vec![0, 1, 2, 3]);
        assert_eq!(out.graph.edges(), &[(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn equal_scores_break_ties_by_index() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf_vec(3, 1, vec![0.0; 3]);
        let score = tape.leaf_vec(3, 1, vec![0.5, 0.5, 0.5]);
        let out = pan_pool_select(&mut tape, &g, &x, &score, 0.5).unwrap();
        assert_eq!(out.kept, vec![0, 1]);
    }

    #[test]
    fn gated_features_use_sigmoid_of_score() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let score = tape.leaf_vec(2, 1, vec![0.0, 10.0]);
        let out = pan_pool_select(&mut tape, &g, &x, &score, 1.0).unwrap();
        let s10 = crate::tape::sigmoid(10.0);
        assert_close(
            out.xp.data(),
            &[0.5, 1.0, 3.0 * s10, 4.0 * s10],
            TOL,
        );
    }

    #[test]
    fn pool_gradients_reach_score_parameters() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf_vec(3, 2, vec![0.4, -0.6, 1.2, 0.3, -0.8, 0.9]);
        let p = tape.leaf_vec(2, 1, vec![0.2, -0.1]);
        let beta = tape.leaf_vec(1, 1, vec![1.0]);
        let diag = Tensor::constant_vec(3, 1, vec![0.5, 0.7, 0.3]);
        let score = pan_pool_score(&mut tape, &x, &p, &beta, &diag).unwrap();
        let out = pan_pool_select(&mut tape, &g, &x, &score, 0.67).unwrap();
        let readout = mean_readout(&mut tape, &out.xp).unwrap();
        let ones = Tensor::constant_vec(2, 1, vec![1.0, 1.0]);
        let loss = tape.matmul(&readout, &ones).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.wrt(&p).iter().any(|&v| v != 0.0));
        assert!(grads.wrt(&beta)[0] != 0.0);
    }

    /// Lump MLP forced to the identity: W1 embeds into the first D of 2D
    /// channels, gamma undoes the batch-norm epsilon, W2 projects back.
    /// Valid for nonnegative inputs in eval mode with unit running stats.
    fn identity_lump(tape: &mut Tape, d: usize) -> (LumpParams, BnStats) {
        let mut w1 = DenseMatrix::zeros(d, 2 * d);
        for i in 0..d {
            w1.set(i, i, 1.0);
        }
        let mut w2 = DenseMatrix::zeros(2 * d, d);
        for i in 0..d {
            w2.set(i, i, 1.0);
        }
        let params = LumpParams {
            w1: tape.leaf(&w1),
            b1: tape.leaf(&DenseMatrix::zeros(1, 2 * d)),
            gamma: tape.leaf_vec(1, 2 * d, vec![(1.0 + BN_EPS).sqrt(); 2 * d]),
            beta: tape.leaf(&DenseMatrix::zeros(1, 2 * d)),
            w2: tape.leaf(&w2),
            b2: tape.leaf(&DenseMatrix::zeros(1, d)),
        };
        (params, BnStats::new(2 * d))
    }

    #[test]
    fn lump_with_identity_mlp_and_zero_edges_passes_nodes_through() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let mut tape = Tape::new();
        let (params, mut stats) = identity_lump(&mut tape, 2);
        let xnode = tape.leaf_vec(3, 2, vec![1.0, 0.5, 2.0, 0.0, 0.25, 3.0]);
        let xedge = tape.leaf_vec(2, 2, vec![0.0; 4]);
        let out = pan_lump(&mut tape, &g, &xnode, &xedge, 0.0, &params, &mut stats, false).unwrap();
        assert_close(out.data(), xnode.data(), 1e-12);
    }

    #[test]
    fn lump_routes_edge_embedding_to_both_endpoints() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let mut tape = Tape::new();
        let (params, mut stats) = identity_lump(&mut tape, 2);
        let xnode = tape.leaf_vec(2, 2, vec![0.0; 4]);
        let xedge = tape.leaf_vec(1, 2, vec![0.3, 0.9]);
        let out = pan_lump(&mut tape, &g, &xnode, &xedge, 0.0, &params, &mut stats, false).unwrap();
        assert_close(out.data(), &[0.3, 0.9, 0.3, 0.9], 1e-12);
    }

    #[test]
    fn isolated_node_aggregates_exactly_zero() {
        let g = Graph::from_edges(2, &[]).unwrap();
        let mut tape = Tape::new();
        let xnode = tape.leaf_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let xedge = tape.leaf_vec(0, 2, vec![]);
        let pre = lump_pre(&mut tape, &g, &xnode, &xedge, 0.5).unwrap();
        assert_eq!(pre.data(), &[1.5, 3.0, 4.5, 6.0]);
    }

    #[test]
    fn readout_of_single_row_is_that_row() {
        let mut tape = Tape::new();
        let x = tape.leaf_vec(1, 3, vec![0.1, 0.2, 0.3]);
        let out = mean_readout(&mut tape, &x).unwrap();
        assert_eq!(out.data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn readout_averages_columns_and_ignores_row_order() {
        let mut tape = Tape::new();
        let x = tape.leaf_vec(2, 1, vec![0.0, 2.0]);
        let out = mean_readout(&mut tape, &x).unwrap();
        assert_eq!(out.data(), &[1.0]);
        let flipped = tape.leaf_vec(2, 1, vec![2.0, 0.0]);
        let out2 = mean_readout(&mut tape, &flipped).unwrap();
        assert_eq!(out2.data(), out.data());
    }

    #[test]
    fn zeroed_head_outputs_zero_logit() {
        let mut tape = Tape::new();
        let params = HeadParams {
            w1: tape.leaf(&DenseMatrix::zeros(4, 2)),
            b1: tape.leaf(&DenseMatrix::zeros(1, 2)),
            w2: tape.leaf(&DenseMatrix::zeros(2, 1)),
            b2: tape.leaf(&DenseMatrix::zeros(1, 1)),
        };
        let x = tape.leaf_vec(1, 4, vec![1.0, -2.0, 0.5, 3.0]);
        let logit = mlp_head(&mut tape, &x, &params).unwrap();
        assert_eq!(logit.item(), 0.0);
        assert_eq!(crate::tape::sigmoid(logit.item()), 0.5);
    }

    #[test]
    fn head_relu_clamps_negative_hidden_units() {
        let mut tape = Tape::new();
        let params = HeadParams {
            w1: tape.leaf_vec(1, 1, vec![1.0]),
            b1: tape.leaf(&DenseMatrix::zeros(1, 1)),
            w2: tape.leaf_vec(1, 1, vec![5.0]),
            b2: tape.leaf(&DenseMatrix::zeros(1, 1)),
        };
        let x = tape.leaf_vec(1, 1, vec![-2.0]);
        let logit = mlp_head(&mut tape, &x, &params).unwrap();
        assert_eq!(logit.item(), 0.0);
    }

    #[test]
    fn hand_set_head_weights() {
        let mut tape = Tape::new();
        let params = HeadParams {
            w1: tape.leaf_vec(2, 1, vec![1.0, 1.0]),
            b1: tape.leaf(&DenseMatrix::zeros(1, 1)),
            w2: tape.leaf_vec(1, 1, vec![2.0]),
            b2: tape.leaf(&DenseMatrix::zeros(1, 1)),
        };
        let x = tape.leaf_vec(1, 2, vec![1.0, 2.0]);
        let logit = mlp_head(&mut tape, &x, &params).unwrap();
        assert_eq!(logit.item(), 6.0);
    }

    #[test]
    fn conv_output_is_permutation_equivariant() {
        let mut rng = crate::testutil::rng(3);
        for _ in 0..10 {
            let g = crate::testutil::random_graph(&mut rng, 6);
            let n = g.num_nodes();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rand::Rng::gen_range(&mut rng, 0..=i));
            }
            let pw = PathWeights::boltzmann(2, 1.0).unwrap();
            let xdata: Vec<f64> = (0..n * 2).map(|i| (i as f64) * 0.37 - 1.0).collect();
            let wdata = vec![0.6, -0.4, 0.1, 0.9];

            let mut tape = Tape::new();
            let met = met_on_tape(&mut tape, &g, &ConvWeights::Fixed(&pw), Normalization::Symmetric).unwrap();
            let x = tape.leaf_vec(n, 2, xdata.clone());
            let w = tape.leaf_vec(2, 2, wdata.clone());
            let out = pan_conv(&mut tape, &met, &x, &w).unwrap();

            let gp = g.permuted(&perm);
            let mut xperm = vec![0.0; n * 2];
            for old in 0..n {
                for j in 0..2 {
                    xperm[perm[old] * 2 + j] = xdata[old * 2 + j];
                }
            }
            let mut tape2 = Tape::new();
            let met2 = met_on_tape(&mut tape2, &gp, &ConvWeights::Fixed(&pw), Normalization::Symmetric).unwrap();
            let x2 = tape2.leaf_vec(n, 2, xperm);
            let w2 = tape2.leaf_vec(2, 2, wdata);
            let out2 = pan_conv(&mut tape2, &met2, &x2, &w2).unwrap();

            for old in 0..n {
                for j in 0..2 {
                    let a = out.get(old, j);
                    let b = out2.get(perm[old], j);
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
