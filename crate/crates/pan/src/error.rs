//! Error type shared across the library.

use std::path::PathBuf;
use thiserror::Error;

/// Unified error type for graph construction, numerics, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {index} ({u}, {v}) has an endpoint outside 0..{num_nodes}")]
    OutOfRangeEndpoint {
        index: usize,
        u: usize,
        v: usize,
        num_nodes: usize,
    },

    #[error("{what}: expected {expected} rows, got {actual}")]
    FeatureShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("duplicate undirected edge ({u}, {v}) at indices {first} and {second}")]
    DuplicateEdge {
        u: usize,
        v: usize,
        first: usize,
        second: usize,
    },

    #[error("walk count exceeds 2^52 at length {length}; cutoff too large for this graph")]
    Overflow { length: usize },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("partition value is zero for node {node}")]
    ZeroPartition { node: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("feature code {value} out of range for field {field} (cardinality {cardinality})")]
    CodeOutOfRange {
        field: usize,
        value: i64,
        cardinality: usize,
    },

    #[error("operation requires a nonempty graph")]
    EmptyGraph,

    #[error("backward requires a scalar loss, got shape {rows}x{cols}")]
    NotScalarLoss { rows: usize, cols: usize },

    #[error("non-finite value produced by op {op}")]
    NonFiniteValue { op: &'static str },

    #[error("labels must be 0 or 1, got {0}")]
    BadLabel(i64),

    #[error("graph index {index} out of range, dataset has {len} graphs")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("ROC-AUC needs both classes present, got only one")]
    DegenerateLabels,

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{what}: expected {expected} rows, found {actual}")]
    RowCountMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-integer field in {file} at line {line}: {text:?}")]
    NonIntegerField {
        file: String,
        line: usize,
        text: String,
    },

    #[error("schema violation at {path}: {detail}")]
    SchemaViolation { path: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::SchemaViolation { .. } => 2,
            Error::NonFiniteValue { .. } | Error::Overflow { .. } => 4,
            _ => 3,
        }
    }
}
