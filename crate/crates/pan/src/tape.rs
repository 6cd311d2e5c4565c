//! Reverse-mode gradient tape over dense 64-bit tensors.
//!
//! The tape records exactly the primitives the model needs, nothing more.
//! Recording appends nodes in execution order; `backward` walks them once
//! in reverse, accumulating adjoints additively across fan-out into fresh
//! zero buffers, so calling it twice gives identical gradients. A tensor
//! participates in differentiation iff it carries a node handle; plain
//! constants (adjacency powers, index sets) stay off the tape.
//!
//! Every primitive validates shapes up front and checks its output for
//! NaN/Inf before handing it back, so numerical blowups surface with the
//! name of the op that produced them.

use crate::error::{Error, Result};
use crate::graph::{CodeMatrix, DenseMatrix};
use std::rc::Rc;

/// Batch-norm epsilon inside the variance square root.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update rate: running = (1-m)*running + m*batch.
pub const BN_MOMENTUM: f64 = 0.1;

/// A 2-D tensor. `node` links it to a tape position; tensors without a
/// node are constants and receive no gradient.
#[derive(Debug, Clone)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Rc<Vec<f64>>,
    node: Option<usize>,
}

impl Tensor {
    /// Constant tensor, off the tape.
    pub fn constant(m: &DenseMatrix) -> Self {
        Tensor {
            rows: m.rows(),
            cols: m.cols(),
            data: Rc::new(m.data().to_vec()),
            node: None,
        }
    }

    pub fn constant_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Tensor {
            rows,
            cols,
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn scalar_constant(v: f64) -> Self {
        Tensor::constant_vec(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!((self.rows, self.cols), (1, 1), "item() on non-scalar");
        self.data[0]
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_vec(self.rows, self.cols, self.data.to_vec())
    }

    pub fn node(&self) -> Option<usize> {
        self.node
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Relu => "relu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Exp => "exp",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Exp => x.exp(),
        }
    }

    /// Local derivative given the input and the saved output.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Tanh => 1.0 - y * y,
            UnaryKind::Exp => y,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + exp(t)).
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

enum Op {
    Leaf,
    Matmul {
        a: Tensor,
        b: Tensor,
    },
    Add {
        a: Tensor,
        b: Tensor,
    },
    AddBias {
        x: Tensor,
        b: Tensor,
    },
    ScaleConst {
        x: Tensor,
        c: f64,
    },
    ScaleScalar {
        x: Tensor,
        s: Tensor,
    },
    Unary {
        x: Tensor,
        kind: UnaryKind,
        out: Rc<Vec<f64>>,
    },
    RowGather {
        x: Tensor,
        idx: Vec<usize>,
    },
    RowScale {
        x: Tensor,
        s: Tensor,
    },
    EmbeddingSum {
        tables: Vec<Tensor>,
        codes: CodeMatrix,
    },
    ColumnMean {
        x: Tensor,
    },
    BatchNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Rc<Vec<f64>>,
        inv_std: Vec<f64>,
        train: bool,
    },
    WeightedMatSum {
        w: Tensor,
        mats: Rc<Vec<DenseMatrix>>,
    },
    FrozenNorm {
        s: Tensor,
        left: Vec<f64>,
        right: Vec<f64>,
    },
    Diag {
        x: Tensor,
    },
    ConcatRows {
        xs: Vec<Tensor>,
    },
    EdgeToNodeSum {
        xe: Tensor,
        edges: Vec<(usize, usize)>,
    },
    WeightedBce {
        logits: Tensor,
        labels: Vec<f64>,
        alpha: f64,
    },
}

struct Node {
    op: Op,
}

/// Running batch-norm statistics, updated during training forwards and
/// frozen at evaluation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(width: usize) -> Self {
        BnStats {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }
}

/// Gradient buffers produced by [`Tape::backward`], addressed by tensor.
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`. Tensors off every path
    /// to the loss get exact zeros. Panics if `t` is a constant.
    pub fn wrt(&self, t: &Tensor) -> Vec<f64> {
        let node = t.node.expect("gradient requested for a constant tensor");
        match &self.by_node[node] {
            Some(g) => g.clone(),
            None => vec![0.0; t.len()],
        }
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue { op })
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

/// Records a computation; see the module docs for the op inventory.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op_name: &'static str, rows: usize, cols: usize, data: Vec<f64>, op: Op) -> Result<Tensor> {
        check_finite(op_name, &data)?;
        let node = self.nodes.len();
        self.nodes.push(Node { op });
        Ok(Tensor {
            rows,
            cols,
            data: Rc::new(data),
            node: Some(node),
        })
    }

    /// Enrolls a parameter: a differentiable leaf holding `m`.
    pub fn leaf(&mut self, m: &DenseMatrix) -> Tensor {
        self.push("leaf", m.rows(), m.cols(), m.data().to_vec(), Op::Leaf)
            .expect("leaf values are validated by the caller")
    }

    pub fn leaf_vec(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        self.leaf(&DenseMatrix::from_vec(rows, cols, data))
    }

    /// C = A · B.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.cols != b.rows {
            return Err(shape_err(
                "matmul",
                format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
            ));
        }
        let (n, k, m) = (a.rows, a.cols, b.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for kk in 0..k {
                let av = a.data[i * k + kk];
                if av == 0.0 {
                    continue;
                }
                let brow = &b.data[kk * m..(kk + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        self.push(
            "matmul",
            n,
            m,
            out,
            Op::Matmul {
                a: a.clone(),
                b: b.clone(),
            },
        )
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if (a.rows, a.cols) != (b.rows, b.cols) {
            return Err(shape_err(
                "add",
                format!("{}x{} plus {}x{}", a.rows, a.cols, b.rows, b.cols),
            ));
        }
        let out = a.data.iter().zip(b.data.iter()).map(|(x, y)| x + y).collect();
        self.push(
            "add",
            a.rows,
            a.cols,
            out,
            Op::Add {
                a: a.clone(),
                b: b.clone(),
            },
        )
    }

    /// Adds a 1 x d bias row to every row of an n x d tensor.
    pub fn add_bias(&mut self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        if b.rows != 1 || b.cols != x.cols {
            return Err(shape_err(
                "add_bias",
                format!("bias {}x{} for input {}x{}", b.rows, b.cols, x.rows, x.cols),
            ));
        }
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.rows {
            for j in 0..x.cols {
                out.push(x.data[i * x.cols + j] + b.data[j]);
            }
        }
        self.push(
            "add_bias",
            x.rows,
            x.cols,
            out,
            Op::AddBias {
                x: x.clone(),
                b: b.clone(),
            },
        )
    }

    /// Multiplies by a compile-time constant.
    pub fn scale_const(&mut self, x: &Tensor, c: f64) -> Result<Tensor> {
        let out = x.data.iter().map(|v| v * c).collect();
        self.push("scale_const", x.rows, x.cols, out, Op::ScaleConst { x: x.clone(), c })
    }

    /// Multiplies by a 1x1 tensor, so the scalar itself can be trained.
    pub fn scale(&mut self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        if (s.rows, s.cols) != (1, 1) {
            return Err(shape_err("scale", format!("scale factor is {}x{}", s.rows, s.cols)));
        }
        let sv = s.data[0];
        let out = x.data.iter().map(|v| v * sv).collect();
        self.push(
            "scale",
            x.rows,
            x.cols,
            out,
            Op::ScaleScalar {
                x: x.clone(),
                s: s.clone(),
            },
        )
    }

    fn unary(&mut self, x: &Tensor, kind: UnaryKind) -> Result<Tensor> {
        let out: Vec<f64> = x.data.iter().map(|&v| kind.apply(v)).collect();
        let shared = Rc::new(out.clone());
        self.push(
            kind.name(),
            x.rows,
            x.cols,
            out,
            Op::Unary {
                x: x.clone(),
                kind,
                out: shared,
            },
        )
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn tanh(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, UnaryKind::Tanh)
    }

    pub fn exp(&mut self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, UnaryKind::Exp)
    }

    /// Selects rows by index; repeats allowed. Gradient scatters back.
    pub fn row_gather(&mut self, x: &Tensor, idx: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows) {
            return Err(shape_err(
                "row_gather",
                format!("row {bad} out of range for {} rows", x.rows),
            ));
        }
        let mut out = Vec::with_capacity(idx.len() * x.cols);
        for &i in idx {
            out.extend_from_slice(&x.data[i * x.cols..(i + 1) * x.cols]);
        }
        self.push(
            "row_gather",
            idx.len(),
            x.cols,
            out,
            Op::RowGather {
                x: x.clone(),
                idx: idx.to_vec(),
            },
        )
    }

    /// Scales row i of an n x d tensor by the i-th entry of an n x 1 tensor.
    pub fn row_scale(&mut self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        if s.cols != 1 || s.rows != x.rows {
            return Err(shape_err(
                "row_scale",
                format!("scales {}x{} for input {}x{}", s.rows, s.cols, x.rows, x.cols),
            ));
        }
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.rows {
            let sv = s.data[i];
            for j in 0..x.cols {
                out.push(x.data[i * x.cols + j] * sv);
            }
        }
        self.push(
            "row_scale",
            x.rows,
            x.cols,
            out,
            Op::RowScale {
                x: x.clone(),
                s: s.clone(),
            },
        )
    }

    /// Row i = sum over fields f of tables[f].row(codes[i][f]).
    ///
    /// All tables must share one embedding width. Codes are validated
    /// against each table's row count.
    pub fn embedding_sum(&mut self, tables: &[Tensor], codes: &CodeMatrix) -> Result<Tensor> {
        if tables.is_empty() {
            return Err(shape_err("embedding_sum", "no embedding tables".into()));
        }
        // A zero-row code matrix carries no field information; it encodes
        // to zero rows (e.g. the edges of an edgeless graph).
        if codes.rows() > 0 && codes.cols() != tables.len() {
            return Err(shape_err(
                "embedding_sum",
                format!("{} code fields for {} tables", codes.cols(), tables.len()),
            ));
        }
        let width = tables[0].cols;
        if let Some(t) = tables.iter().find(|t| t.cols != width) {
            return Err(shape_err(
                "embedding_sum",
                format!("table width {} differs from {}", t.cols, width),
            ));
        }
        let n = codes.rows();
        let mut out = vec![0.0; n * width];
        for i in 0..n {
            for (field, table) in tables.iter().enumerate() {
                let code = codes.get(i, field);
                if code < 0 || code as usize >= table.rows {
                    return Err(Error::CodeOutOfRange {
                        field,
                        value: code,
                        cardinality: table.rows,
                    });
                }
                let row = &table.data[code as usize * width..(code as usize + 1) * width];
                for (o, &v) in out[i * width..(i + 1) * width].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        self.push(
            "embedding_sum",
            n,
            width,
            out,
            Op::EmbeddingSum {
                tables: tables.to_vec(),
                codes: codes.clone(),
            },
        )
    }

    /// Column-wise mean, n x d -> 1 x d.
    pub fn column_mean(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rows == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut out = vec![0.0; x.cols];
        for i in 0..x.rows {
            for j in 0..x.cols {
                out[j] += x.data[i * x.cols + j];
            }
        }
        let inv = 1.0 / x.rows as f64;
        for o in &mut out {
            *o *= inv;
        }
        self.push("column_mean", 1, x.cols, out, Op::ColumnMean { x: x.clone() })
    }

    /// Batch normalization over rows.
    ///
    /// Training mode normalizes by the batch mean and biased variance,
    /// then folds the batch statistics into `stats` (unbiased variance,
    /// momentum [`BN_MOMENTUM`]); gradients flow through the statistics.
    /// Eval mode normalizes by `stats` unchanged, making the op a frozen
    /// per-column affine map.
    pub fn batch_norm(
        &mut self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        stats: &mut BnStats,
        train: bool,
    ) -> Result<Tensor> {
        let d = x.cols;
        if gamma.rows != 1 || gamma.cols != d || beta.rows != 1 || beta.cols != d {
            return Err(shape_err(
                "batch_norm",
                format!("gamma {}x{}, beta {}x{} for width {d}", gamma.rows, gamma.cols, beta.rows, beta.cols),
            ));
        }
        if stats.mean.len() != d || stats.var.len() != d {
            return Err(shape_err(
                "batch_norm",
                format!("running stats width {} for width {d}", stats.mean.len()),
            ));
        }
        let n = x.rows;
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let (mean, var) = if train {
            let mut mean = vec![0.0; d];
            for i in 0..n {
                for j in 0..d {
                    mean[j] += x.data[i * d + j];
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            let mut var = vec![0.0; d];
            for i in 0..n {
                for j in 0..d {
                    let c = x.data[i * d + j] - mean[j];
                    var[j] += c * c;
                }
            }
            for v in &mut var {
                *v /= n as f64;
            }
            let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
            for j in 0..d {
                stats.mean[j] = (1.0 - BN_MOMENTUM) * stats.mean[j] + BN_MOMENTUM * mean[j];
                stats.var[j] = (1.0 - BN_MOMENTUM) * stats.var[j] + BN_MOMENTUM * var[j] * unbias;
            }
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Vec::with_capacity(n * d);
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                let h = (x.data[i * d + j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(gamma.data[j] * h + beta.data[j]);
            }
        }
        self.push(
            "batch_norm",
            n,
            d,
            out,
            Op::BatchNorm {
                x: x.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                xhat: Rc::new(xhat),
                inv_std,
                train,
            },
        )
    }

    /// S = sum over l of w[0][l] * mats[l], with the matrices constant.
    ///
    /// This is the trainable-weight path into the MET matrix: gradients
    /// reach only the weights.
    pub fn weighted_mat_sum(&mut self, w: &Tensor, mats: &Rc<Vec<DenseMatrix>>) -> Result<Tensor> {
        if w.rows != 1 || w.cols != mats.len() {
            return Err(shape_err(
                "weighted_mat_sum",
                format!("{}x{} weights for {} matrices", w.rows, w.cols, mats.len()),
            ));
        }
        if mats.is_empty() {
            return Err(shape_err("weighted_mat_sum", "no matrices".into()));
        }
        let (n, m) = (mats[0].rows(), mats[0].cols());
        let mut out = vec![0.0; n * m];
        for (l, mat) in mats.iter().enumerate() {
            let wl = w.data[l];
            for (o, &v) in out.iter_mut().zip(mat.data()) {
                *o += wl * v;
            }
        }
        self.push(
            "weighted_mat_sum",
            n,
            m,
            out,
            Op::WeightedMatSum {
                w: w.clone(),
                mats: Rc::clone(mats),
            },
        )
    }

    /// M[i][j] = left[i] * S[i][j] * right[j] with the scalings held
    /// constant, implementing the frozen-normalization semantics: the
    /// scalings are recomputed from S every forward pass, but no gradient
    /// flows through them.
    pub fn frozen_norm(&mut self, s: &Tensor, left: &[f64], right: &[f64]) -> Result<Tensor> {
        if left.len() != s.rows || right.len() != s.cols {
            return Err(shape_err(
                "frozen_norm",
                format!("scalings {}/{} for {}x{}", left.len(), right.len(), s.rows, s.cols),
            ));
        }
        let mut out = Vec::with_capacity(s.len());
        for i in 0..s.rows {
            for j in 0..s.cols {
                out.push(left[i] * s.data[i * s.cols + j] * right[j]);
            }
        }
        self.push(
            "frozen_norm",
            s.rows,
            s.cols,
            out,
            Op::FrozenNorm {
                s: s.clone(),
                left: left.to_vec(),
                right: right.to_vec(),
            },
        )
    }

    /// Main diagonal of a square tensor, as n x 1.
    pub fn diag(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rows != x.cols {
            return Err(shape_err("diag", format!("{}x{} is not square", x.rows, x.cols)));
        }
        let out = (0..x.rows).map(|i| x.data[i * x.cols + i]).collect();
        self.push("diag", x.rows, 1, out, Op::Diag { x: x.clone() })
    }

    /// Stacks tensors with equal widths on top of each other.
    pub fn concat_rows(&mut self, xs: &[Tensor]) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(shape_err("concat_rows", "nothing to concatenate".into()));
        }
        let cols = xs[0].cols;
        if let Some(x) = xs.iter().find(|x| x.cols != cols) {
            return Err(shape_err(
                "concat_rows",
                format!("width {} differs from {}", x.cols, cols),
            ));
        }
        let rows = xs.iter().map(|x| x.rows).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for x in xs {
            out.extend_from_slice(&x.data);
        }
        self.push("concat_rows", rows, cols, out, Op::ConcatRows { xs: xs.to_vec() })
    }

    /// Sums edge embeddings into both endpoints: out[u] += xe[e] and
    /// out[v] += xe[e] for each edge e = (u, v); a self-loop contributes
    /// once. Nodes with no incident edges get exact zeros.
    pub fn edge_to_node_sum(
        &mut self,
        xe: &Tensor,
        edges: &[(usize, usize)],
        num_nodes: usize,
    ) -> Result<Tensor> {
        if xe.rows != edges.len() {
            return Err(shape_err(
                "edge_to_node_sum",
                format!("{} embedding rows for {} edges", xe.rows, edges.len()),
            ));
        }
        let d = xe.cols;
        let mut out = vec![0.0; num_nodes * d];
        for (e, &(u, v)) in edges.iter().enumerate() {
            let row = &xe.data[e * d..(e + 1) * d];
            for (o, &x) in out[u * d..(u + 1) * d].iter_mut().zip(row) {
                *o += x;
            }
            if v != u {
                for (o, &x) in out[v * d..(v + 1) * d].iter_mut().zip(row) {
                    *o += x;
                }
            }
        }
        self.push(
            "edge_to_node_sum",
            num_nodes,
            d,
            out,
            Op::EdgeToNodeSum {
                xe: xe.clone(),
                edges: edges.to_vec(),
            },
        )
    }

    /// Mean class-weighted binary cross-entropy over logits.
    ///
    /// loss = mean_n [ alpha * y_n * softplus(-z_n) + (1 - y_n) * softplus(z_n) ],
    /// the numerically stable form of -alpha*y*ln(sigma) - (1-y)*ln(1-sigma).
    pub fn weighted_bce(&mut self, logits: &Tensor, labels: &[f64], alpha: f64) -> Result<Tensor> {
        if logits.cols != 1 || logits.rows != labels.len() {
            return Err(shape_err(
                "weighted_bce",
                format!("{}x{} logits for {} labels", logits.rows, logits.cols, labels.len()),
            ));
        }
        if labels.is_empty() {
            return Err(shape_err("weighted_bce", "empty batch".into()));
        }
        let mut total = 0.0;
        for (&z, &y) in logits.data.iter().zip(labels) {
            debug_assert!(y == 0.0 || y == 1.0);
            total += alpha * y * softplus(-z) + (1.0 - y) * softplus(z);
        }
        let loss = total / labels.len() as f64;
        self.push(
            "weighted_bce",
            1,
            1,
            vec![loss],
            Op::WeightedBce {
                logits: logits.clone(),
                labels: labels.to_vec(),
                alpha,
            },
        )
    }

    /// Reverse pass from a scalar loss. The tape is not consumed;
    /// repeated calls return identical gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if (loss.rows, loss.cols) != (1, 1) {
            return Err(Error::NotScalarLoss {
                rows: loss.rows,
                cols: loss.cols,
            });
        }
        let seed = loss
            .node
            .expect("loss must be recorded on the tape");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[seed] = Some(vec![1.0]);
        for id in (0..self.nodes.len()).rev() {
            let Some(dout) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &dout, &mut grads);
            grads[id] = Some(dout);
        }
        Ok(Gradients { by_node: grads })
    }

    fn propagate(&self, node: &Node, dout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn accum(grads: &mut [Option<Vec<f64>>], t: &Tensor, add: impl FnOnce(&mut [f64])) {
            if let Some(id) = t.node {
                let buf = grads[id].get_or_insert_with(|| vec![0.0; t.len()]);
                add(buf);
            }
        }

        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (n, k, m) = (a.rows, a.cols, b.cols);
                accum(grads, a, |da| {
                    // dA = dC * B^T
                    for i in 0..n {
                        for kk in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += dout[i * m + j] * b.data[kk * m + j];
                            }
                            da[i * k + kk] += s;
                        }
                    }
                });
                accum(grads, b, |db| {
                    // dB = A^T * dC
                    for kk in 0..k {
                        for j in 0..m {
                            let mut s = 0.0;
                            for i in 0..n {
                                s += a.data[i * k + kk] * dout[i * m + j];
                            }
                            db[kk * m + j] += s;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                accum(grads, a, |da| {
                    for (d, &g) in da.iter_mut().zip(dout) {
                        *d += g;
                    }
                });
                accum(grads, b, |db| {
                    for (d, &g) in db.iter_mut().zip(dout) {
                        *d += g;
                    }
                });
            }
            Op::AddBias { x, b } => {
                accum(grads, x, |dx| {
                    for (d, &g) in dx.iter_mut().zip(dout) {
                        *d += g;
                    }
                });
                accum(grads, b, |db| {
                    for i in 0..x.rows {
                        for j in 0..x.cols {
                            db[j] += dout[i * x.cols + j];
                        }
                    }
                });
            }
            Op::ScaleConst { x, c } => {
                accum(grads, x, |dx| {
                    for (d, &g) in dx.iter_mut().zip(dout) {
                        *d += c * g;
                    }
                });
            }
            Op::ScaleScalar { x, s } => {
                let sv = s.data[0];
                accum(grads, x, |dx| {
                    for (d, &g) in dx.iter_mut().zip(dout) {
                        *d += sv * g;
                    }
                });
                accum(grads, s, |ds| {
                    let mut total = 0.0;
                    for (&xv, &g) in x.data.iter().zip(dout) {
                        total += xv * g;
                    }
                    ds[0] += total;
                });
            }
            Op::Unary { x, kind, out } => {
                accum(grads, x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += kind.derivative(x.data[i], out[i]) * dout[i];
                    }
                });
            }
            Op::RowGather { x, idx } => {
                accum(grads, x, |dx| {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..x.cols {
                            dx[i * x.cols + j] += dout[r * x.cols + j];
                        }
                    }
                });
            }
            Op::RowScale { x, s } => {
                accum(grads, x, |dx| {
                    for i in 0..x.rows {
                        let sv = s.data[i];
                        for j in 0..x.cols {
                            dx[i * x.cols + j] += sv * dout[i * x.cols + j];
                        }
                    }
                });
                accum(grads, s, |ds| {
                    for i in 0..x.rows {
                        let mut total = 0.0;
                        for j in 0..x.cols {
                            total += x.data[i * x.cols + j] * dout[i * x.cols + j];
                        }
                        ds[i] += total;
                    }
                });
            }
            Op::EmbeddingSum { tables, codes } => {
                let width = tables[0].cols;
                for (field, table) in tables.iter().enumerate() {
                    accum(grads, table, |dt| {
                        for i in 0..codes.rows() {
                            let code = codes.get(i, field) as usize;
                            for j in 0..width {
                                dt[code * width + j] += dout[i * width + j];
                            }
                        }
                    });
                }
            }
            Op::ColumnMean { x } => {
                let inv = 1.0 / x.rows as f64;
                accum(grads, x, |dx| {
                    for i in 0..x.rows {
                        for j in 0..x.cols {
                            dx[i * x.cols + j] += inv * dout[j];
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, d) = (x.rows, x.cols);
                accum(grads, gamma, |dg| {
                    for i in 0..n {
                        for j in 0..d {
                            dg[j] += dout[i * d + j] * xhat[i * d + j];
                        }
                    }
                });
                accum(grads, beta, |db| {
                    for i in 0..n {
                        for j in 0..d {
                            db[j] += dout[i * d + j];
                        }
                    }
                });
                if *train {
                    // Full formula: gradients flow through the batch mean
                    // and variance.
                    accum(grads, x, |dx| {
                        let nf = n as f64;
                        for j in 0..d {
                            let g = gamma.data[j];
                            let mut sum_dh = 0.0;
                            let mut sum_dh_h = 0.0;
                            for i in 0..n {
                                let dh = dout[i * d + j] * g;
                                sum_dh += dh;
                                sum_dh_h += dh * xhat[i * d + j];
                            }
                            for i in 0..n {
                                let dh = dout[i * d + j] * g;
                                dx[i * d + j] +=
                                    inv_std[j] / nf * (nf * dh - sum_dh - xhat[i * d + j] * sum_dh_h);
                            }
                        }
                    });
                } else {
                    accum(grads, x, |dx| {
                        for i in 0..n {
                            for j in 0..d {
                                dx[i * d + j] += dout[i * d + j] * gamma.data[j] * inv_std[j];
                            }
                        }
                    });
                }
            }
            Op::WeightedMatSum { w, mats } => {
                accum(grads, w, |dw| {
                    for (l, mat) in mats.iter().enumerate() {
                        let mut total = 0.0;
                        for (&m, &g) in mat.data().iter().zip(dout) {
                            total += m * g;
                        }
                        dw[l] += total;
                    }
                });
            }
            Op::FrozenNorm { s, left, right } => {
                accum(grads, s, |ds| {
                    for i in 0..s.rows {
                        for j in 0..s.cols {
                            ds[i * s.cols + j] += left[i] * right[j] * dout[i * s.cols + j];
                        }
                    }
                });
            }
            Op::Diag { x } => {
                accum(grads, x, |dx| {
                    for i in 0..x.rows {
                        dx[i * x.cols + i] += dout[i];
                    }
                });
            }
            Op::ConcatRows { xs } => {
                let mut offset = 0;
                for x in xs {
                    let span = x.len();
                    accum(grads, x, |dx| {
                        for (d, &g) in dx.iter_mut().zip(&dout[offset..offset + span]) {
                            *d += g;
                        }
                    });
                    offset += span;
                }
            }
            Op::EdgeToNodeSum { xe, edges } => {
                let d = xe.cols;
                accum(grads, xe, |dxe| {
                    for (e, &(u, v)) in edges.iter().enumerate() {
                        for j in 0..d {
                            let mut g = dout[u * d + j];
                            if v != u {
                                g += dout[v * d + j];
                            }
                            dxe[e * d + j] += g;
                        }
                    }
                });
            }
            Op::WeightedBce { logits, labels, alpha } => {
                let inv_n = 1.0 / labels.len() as f64;
                let g = dout[0];
                accum(grads, logits, |dz| {
                    for (i, (&z, &y)) in logits.data.iter().zip(labels).enumerate() {
                        let s = sigmoid(z);
                        dz[i] += g * inv_n * (alpha * y * (s - 1.0) + (1.0 - y) * s);
                    }
                });
            }
        }
    }
}
