//! Immutable sparse graph representation and exact walk counting.
//!
//! Graphs are undirected, store each edge once, and carry integer-coded
//! categorical features on nodes and edges. Walk counts are computed as
//! dense adjacency powers; molecular graphs are small enough that a
//! sparse path would buy nothing.

use crate::error::{Error, Result};
use std::collections::HashMap;

/// Largest walk count representable without losing integer precision in f64.
pub const WALK_COUNT_LIMIT: f64 = 4_503_599_627_370_496.0; // 2^52

/// Dense row-major matrix of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length does not
    /// match `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "dense matrix data length");
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Plain dense matrix product.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    /// Adds `scale * other` into this matrix.
    pub fn add_scaled(&mut self, other: &DenseMatrix, scale: f64) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (d, s) in self.data.iter_mut().zip(&other.data) {
            *d += scale * s;
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        assert_eq!(self.rows, self.cols, "diagonal of a square matrix");
        (0..self.rows).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Row-major matrix of integer categorical codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl CodeMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i64>) -> Self {
        assert_eq!(data.len(), rows * cols, "code matrix data length");
        CodeMatrix { rows, cols, data }
    }

    /// Matrix with `rows` rows and zero feature columns.
    pub fn empty(rows: usize) -> Self {
        CodeMatrix {
            rows,
            cols: 0,
            data: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged feature rows");
            data.extend_from_slice(r);
        }
        CodeMatrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.cols + j]
    }

    /// Keeps the given rows, in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        CodeMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Immutable undirected graph with categorical node/edge features and an
/// optional binary label.
///
/// Each undirected edge is stored once; [`Graph::adjacency`] materializes
/// both directions. Self-loops are kept verbatim when present in the
/// source data.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_feat: CodeMatrix,
    edge_feat: CodeMatrix,
    label: Option<bool>,
}

impl Graph {
    /// Validates and builds a graph.
    ///
    /// Endpoints must be in range, feature row counts must match node and
    /// edge counts, and no undirected edge may appear twice (with
    /// `(u, v)` and `(v, u)` counting as the same edge).
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        node_feat: CodeMatrix,
        edge_feat: CodeMatrix,
        label: Option<bool>,
    ) -> Result<Self> {
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for (index, &(u, v)) in edges.iter().enumerate() {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::OutOfRangeEndpoint {
                    index,
                    u,
                    v,
                    num_nodes,
                });
            }
            let key = (u.min(v), u.max(v));
            if let Some(&first) = seen.get(&key) {
                return Err(Error::DuplicateEdge {
                    u,
                    v,
                    first,
                    second: index,
                });
            }
            seen.insert(key, index);
        }
        if node_feat.rows() != num_nodes {
            return Err(Error::FeatureShapeMismatch {
                what: "node_feat",
                expected: num_nodes,
                actual: node_feat.rows(),
            });
        }
        if edge_feat.rows() != edges.len() {
            return Err(Error::FeatureShapeMismatch {
                what: "edge_feat",
                expected: edges.len(),
                actual: edge_feat.rows(),
            });
        }
        Ok(Graph {
            num_nodes,
            edges,
            node_feat,
            edge_feat,
            label,
        })
    }

    /// Builds a featureless unlabeled graph; handy in tests and demos.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Graph::new(
            num_nodes,
            edges.to_vec(),
            CodeMatrix::empty(num_nodes),
            CodeMatrix::empty(edges.len()),
            None,
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_feat(&self) -> &CodeMatrix {
        &self.node_feat
    }

    pub fn edge_feat(&self) -> &CodeMatrix {
        &self.edge_feat
    }

    pub fn label(&self) -> Option<bool> {
        self.label
    }

    /// Symmetric {0, 1} adjacency matrix.
    pub fn adjacency(&self) -> DenseMatrix {
        let n = self.num_nodes;
        let mut a = DenseMatrix::zeros(n, n);
        for &(u, v) in &self.edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        a
    }

    /// Number of length-`l` walks between every node pair, as `A^l`.
    ///
    /// Counts are exact integers held in f64; any entry past 2^52 is an
    /// overflow error rather than a silent precision loss.
    pub fn walk_counts(&self, l: usize) -> Result<DenseMatrix> {
        let powers = self.adjacency_powers(l)?;
        Ok(powers.into_iter().last().expect("at least A^0"))
    }

    /// All powers `A^0 ..= A^max_len`, with the same overflow guard as
    /// [`Graph::walk_counts`].
    pub fn adjacency_powers(&self, max_len: usize) -> Result<Vec<DenseMatrix>> {
        let a = self.adjacency();
        let mut powers = Vec::with_capacity(max_len + 1);
        powers.push(DenseMatrix::identity(self.num_nodes));
        for length in 1..=max_len {
            let next = powers[length - 1].matmul(&a);
            if next.data().iter().any(|&x| x > WALK_COUNT_LIMIT) {
                return Err(Error::Overflow { length });
            }
            powers.push(next);
        }
        Ok(powers)
    }

    /// Induced subgraph on `kept` (ascending original indices), with nodes
    /// relabeled consecutively in that order. Node features, edge features
    /// and the label carry over.
    pub fn induced_subgraph(&self, kept: &[usize]) -> Graph {
        let mut relabel = vec![usize::MAX; self.num_nodes];
        for (new, &old) in kept.iter().enumerate() {
            relabel[old] = new;
        }
        let mut edges = Vec::new();
        let mut edge_rows = Vec::new();
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            if relabel[u] != usize::MAX && relabel[v] != usize::MAX {
                edges.push((relabel[u], relabel[v]));
                edge_rows.push(e);
            }
        }
        Graph {
            num_nodes: kept.len(),
            edges,
            node_feat: self.node_feat.gather_rows(kept),
            edge_feat: self.edge_feat.gather_rows(&edge_rows),
            label: self.label,
        }
    }

    /// Relabels nodes by `perm`, where `perm[old] = new`. Used by the
    /// permutation-invariance tests.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        assert_eq!(perm.len(), self.num_nodes);
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut node_rows = vec![0usize; self.num_nodes];
        for (old, &new) in perm.iter().enumerate() {
            node_rows[new] = old;
        }
        Graph {
            num_nodes: self.num_nodes,
            edges,
            node_feat: self.node_feat.gather_rows(&node_rows),
            edge_feat: self.edge_feat.clone(),
            label: self.label,
        }
    }
}
