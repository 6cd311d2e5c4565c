//! Model assembly: the PAN and HPAN variants, parameter storage,
//! enrollment onto a tape, and the full forward pass.
//!
//! Parameters live here as plain matrices. Every forward pass enrolls
//! them as tape leaves in one canonical order; gradients and optimizer
//! state index into that same order, which is what makes training
//! deterministic.

use crate::error::{Error, Result};
use crate::graph::{DenseMatrix, Graph};
use crate::layers::{self, ConvWeights, HeadParams, LumpParams};
use crate::met::{Normalization, PathWeights};
use crate::tape::{BnStats, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Which model to build: PAN uses node features only; HPAN adds the edge
/// encoder and the lump layer in front of the convolution stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    Pan,
    Hpan,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Pan => write!(f, "PAN"),
            Variant::Hpan => write!(f, "HPAN"),
        }
    }
}

/// Everything needed to build and train a model. All fields have
/// defaults, so a config file only states what it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub emb_dim: usize,
    /// Maximal path length per PANConv layer; the list length is the
    /// number of conv/pool layers.
    pub conv_cutoffs: Vec<usize>,
    pub pool_ratio: f64,
    /// Positive-class loss weight. Unset means the variant default:
    /// 5.0 for PAN, 10.0 for HPAN.
    pub alpha: Option<f64>,
    pub normalization: Normalization,
    pub trainable_path_weights: bool,
    pub temperature: f64,
    /// Self-emphasis in the lump layer, fixed (not trained).
    pub lump_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Hpan,
            emb_dim: 64,
            conv_cutoffs: vec![3, 2, 2],
            pool_ratio: 0.8,
            alpha: None,
            normalization: Normalization::Symmetric,
            trainable_path_weights: true,
            temperature: 1.0,
            lump_eps: 0.0,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_cutoffs.is_empty() {
            return Err(Error::Config("conv_cutoffs must be nonempty".into()));
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "pool_ratio must be in (0, 1], got {}",
                self.pool_ratio
            )));
        }
        if let Some(a) = self.alpha {
            if !(a >= 1.0) {
                return Err(Error::Config(format!("alpha must be >= 1, got {a}")));
            }
        }
        if self.emb_dim < 2 || self.emb_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "emb_dim must be even and >= 2 (the head halves it), got {}",
                self.emb_dim
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// The loss weight actually used: explicit value or variant default.
    pub fn effective_alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.variant {
            Variant::Pan => 5.0,
            Variant::Hpan => 10.0,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.conv_cutoffs.len()
    }
}

#[derive(Debug, Clone)]
struct Lump {
    w1: DenseMatrix,
    b1: DenseMatrix,
    gamma: DenseMatrix,
    beta: DenseMatrix,
    w2: DenseMatrix,
    b2: DenseMatrix,
    stats: BnStats,
}

#[derive(Debug, Clone)]
struct Conv {
    /// Log of the per-length weights, 1 x (L+1). Enrolled as a parameter
    /// only when path weights are trainable.
    log_w: DenseMatrix,
    w: DenseMatrix,
}

#[derive(Debug, Clone)]
struct Pool {
    p: DenseMatrix,
    beta: DenseMatrix,
}

#[derive(Debug, Clone)]
struct Head {
    w1: DenseMatrix,
    b1: DenseMatrix,
    w2: DenseMatrix,
    b2: DenseMatrix,
}

/// A trained or trainable model instance.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    node_cardinalities: Vec<usize>,
    edge_cardinalities: Vec<usize>,
    atom_tables: Vec<DenseMatrix>,
    edge_tables: Vec<DenseMatrix>,
    lump: Option<Lump>,
    convs: Vec<Conv>,
    pools: Vec<Pool>,
    head: Head,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    DenseMatrix::from_vec(rows, cols, data)
}

impl Model {
    /// Builds a freshly initialized model. Weight matrices are Xavier
    /// uniform, biases zero, path log-weights -l/T, pool beta 1.
    ///
    /// Draws from `rng` in the canonical parameter order, so a given seed
    /// always produces the same model.
    pub fn init(
        config: ModelConfig,
        node_cardinalities: &[usize],
        edge_cardinalities: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Model> {
        config.validate()?;
        if node_cardinalities.is_empty() {
            return Err(Error::Config("need at least one node feature field".into()));
        }
        if config.variant == Variant::Hpan && edge_cardinalities.is_empty() {
            return Err(Error::Config(
                "HPAN needs edge features; dataset has none".into(),
            ));
        }
        let d = config.emb_dim;
        let atom_tables: Vec<DenseMatrix> = node_cardinalities
            .iter()
            .map(|&card| xavier(rng, card, d))
            .collect();
        let (edge_tables, lump) = if config.variant == Variant::Hpan {
            let tables: Vec<DenseMatrix> = edge_cardinalities
                .iter()
                .map(|&card| xavier(rng, card, d))
                .collect();
            let lump = Lump {
                w1: xavier(rng, d, 2 * d),
                b1: DenseMatrix::zeros(1, 2 * d),
                gamma: DenseMatrix::from_vec(1, 2 * d, vec![1.0; 2 * d]),
                beta: DenseMatrix::zeros(1, 2 * d),
                w2: xavier(rng, 2 * d, d),
                b2: DenseMatrix::zeros(1, d),
                stats: BnStats::new(2 * d),
            };
            (tables, Some(lump))
        } else {
            (Vec::new(), None)
        };
        let mut convs = Vec::new();
        let mut pools = Vec::new();
        for &cutoff in &config.conv_cutoffs {
            let log_w: Vec<f64> = (0..=cutoff)
                .map(|l| -(l as f64) / config.temperature)
                .collect();
            convs.push(Conv {
                log_w: DenseMatrix::from_vec(1, cutoff + 1, log_w),
                w: xavier(rng, d, d),
            });
            pools.push(Pool {
                p: xavier(rng, d, 1),
                beta: DenseMatrix::from_vec(1, 1, vec![1.0]),
            });
        }
        let head = Head {
            w1: xavier(rng, d, d / 2),
            b1: DenseMatrix::zeros(1, d / 2),
            w2: xavier(rng, d / 2, 1),
            b2: DenseMatrix::zeros(1, 1),
        };
        Ok(Model {
            config,
            node_cardinalities: node_cardinalities.to_vec(),
            edge_cardinalities: edge_cardinalities.to_vec(),
            atom_tables,
            edge_tables,
            lump,
            convs,
            pools,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn node_cardinalities(&self) -> &[usize] {
        &self.node_cardinalities
    }

    pub fn edge_cardinalities(&self) -> &[usize] {
        &self.edge_cardinalities
    }

    /// Visits every trainable parameter in the canonical order.
    pub fn for_each_param(&self, mut f: impl FnMut(String, &DenseMatrix)) {
        for (i, t) in self.atom_tables.iter().enumerate() {
            f(format!("atom_encoder.{i}"), t);
        }
        for (i, t) in self.edge_tables.iter().enumerate() {
            f(format!("edge_encoder.{i}"), t);
        }
        if let Some(l) = &self.lump {
            f("lump.w1".into(), &l.w1);
            f("lump.b1".into(), &l.b1);
            f("lump.gamma".into(), &l.gamma);
            f("lump.beta".into(), &l.beta);
            f("lump.w2".into(), &l.w2);
            f("lump.b2".into(), &l.b2);
        }
        for (i, (c, p)) in self.convs.iter().zip(&self.pools).enumerate() {
            if self.config.trainable_path_weights {
                f(format!("conv.{i}.log_w"), &c.log_w);
            }
            f(format!("conv.{i}.w"), &c.w);
            f(format!("pool.{i}.p"), &p.p);
            f(format!("pool.{i}.beta"), &p.beta);
        }
        f("head.w1".into(), &self.head.w1);
        f("head.b1".into(), &self.head.b1);
        f("head.w2".into(), &self.head.w2);
        f("head.b2".into(), &self.head.b2);
    }

    /// Mutable variant of [`Model::for_each_param`], same order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut DenseMatrix)) {
        for t in &mut self.atom_tables {
            f(t);
        }
        for t in &mut self.edge_tables {
            f(t);
        }
        if let Some(l) = &mut self.lump {
            f(&mut l.w1);
            f(&mut l.b1);
            f(&mut l.gamma);
            f(&mut l.beta);
            f(&mut l.w2);
            f(&mut l.b2);
        }
        let trainable = self.config.trainable_path_weights;
        for (c, p) in self.convs.iter_mut().zip(&mut self.pools) {
            if trainable {
                f(&mut c.log_w);
            }
            f(&mut c.w);
            f(&mut p.p);
            f(&mut p.beta);
        }
        f(&mut self.head.w1);
        f(&mut self.head.b1);
        f(&mut self.head.w2);
        f(&mut self.head.b2);
    }

    /// Non-parameter state that must survive a save/load round trip:
    /// the batch-norm running statistics.
    pub fn state_blocks(&self) -> Vec<(String, Vec<f64>)> {
        match &self.lump {
            Some(l) => vec![
                ("lump.running_mean".into(), l.stats.mean.clone()),
                ("lump.running_var".into(), l.stats.var.clone()),
            ],
            None => Vec::new(),
        }
    }

    pub fn set_state_block(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let lump = self.lump.as_mut().ok_or_else(|| {
            Error::Checkpoint(format!("state block {name} for a model without a lump layer"))
        })?;
        let target = match name {
            "lump.running_mean" => &mut lump.stats.mean,
            "lump.running_var" => &mut lump.stats.var,
            _ => return Err(Error::Checkpoint(format!("unknown state block {name}"))),
        };
        if target.len() != data.len() {
            return Err(Error::Checkpoint(format!(
                "state block {name} has {} values, expected {}",
                data.len(),
                target.len()
            )));
        }
        target.copy_from_slice(data);
        Ok(())
    }

    /// Total trainable element count with a per-parameter breakdown.
    pub fn count_parameters(&self) -> ParamReport {
        let mut items = Vec::new();
        self.for_each_param(|name, m| items.push((name, m.rows() * m.cols())));
        let total = items.iter().map(|(_, n)| n).sum();
        ParamReport { items, total }
    }

    /// Enrolls every parameter as a tape leaf, in the canonical order.
    pub fn enroll(&self, tape: &mut Tape) -> Enrolled {
        let atom_tables: Vec<Tensor> = self.atom_tables.iter().map(|t| tape.leaf(t)).collect();
        let edge_tables: Vec<Tensor> = self.edge_tables.iter().map(|t| tape.leaf(t)).collect();
        let lump = self.lump.as_ref().map(|l| LumpParams {
            w1: tape.leaf(&l.w1),
            b1: tape.leaf(&l.b1),
            gamma: tape.leaf(&l.gamma),
            beta: tape.leaf(&l.beta),
            w2: tape.leaf(&l.w2),
            b2: tape.leaf(&l.b2),
        });
        let convs: Vec<EnrolledConv> = self
            .convs
            .iter()
            .map(|c| EnrolledConv {
                log_w: if self.config.trainable_path_weights {
                    Some(tape.leaf(&c.log_w))
                } else {
                    None
                },
                fixed: if self.config.trainable_path_weights {
                    None
                } else {
                    Some(PathWeights::from_log_weights(c.log_w.data()))
                },
                w: tape.leaf(&c.w),
            })
            .collect();
        let pools: Vec<(Tensor, Tensor)> = self
            .pools
            .iter()
            .map(|p| (tape.leaf(&p.p), tape.leaf(&p.beta)))
            .collect();
        let head = HeadParams {
            w1: tape.leaf(&self.head.w1),
            b1: tape.leaf(&self.head.b1),
            w2: tape.leaf(&self.head.w2),
            b2: tape.leaf(&self.head.b2),
        };
        Enrolled {
            atom_tables,
            edge_tables,
            lump,
            convs,
            pools,
            head,
        }
    }

    /// Forward pass for a training mini-batch. Updates batch-norm running
    /// statistics; graphs are processed independently except for the
    /// batch-norm statistics, which pool over all node rows in the batch.
    pub fn forward_train(&mut self, tape: &mut Tape, graphs: &[&Graph]) -> Result<ForwardPass> {
        let mut stats = self.lump.as_ref().map(|l| l.stats.clone());
        let out = self.forward_with(tape, graphs, true, stats.as_mut(), None)?;
        if let (Some(l), Some(s)) = (self.lump.as_mut(), stats) {
            l.stats = s;
        }
        Ok(out)
    }

    /// Forward pass with frozen statistics; the model is untouched.
    pub fn forward_eval(&self, tape: &mut Tape, graphs: &[&Graph]) -> Result<ForwardPass> {
        let mut stats = self.lump.as_ref().map(|l| l.stats.clone());
        self.forward_with(tape, graphs, false, stats.as_mut(), None)
    }

    /// Evaluation forward with the trainable-route normalization partition
    /// captured or replayed through `pins`; see [`layers::ZPins`]. This is
    /// the forward a finite-difference probe of the tape gradient needs.
    pub fn forward_eval_pinned(
        &self,
        tape: &mut Tape,
        graphs: &[&Graph],
        pins: &mut layers::ZPins,
    ) -> Result<ForwardPass> {
        let mut stats = self.lump.as_ref().map(|l| l.stats.clone());
        self.forward_with(tape, graphs, false, stats.as_mut(), Some(pins))
    }

    /// Evaluation logit for one graph.
    pub fn logit(&self, g: &Graph) -> Result<f64> {
        let mut tape = Tape::new();
        let pass = self.forward_eval(&mut tape, &[g])?;
        Ok(pass.logits.get(0, 0))
    }

    fn forward_with(
        &self,
        tape: &mut Tape,
        graphs: &[&Graph],
        train: bool,
        mut bn_stats: Option<&mut BnStats>,
        mut pins: Option<&mut layers::ZPins>,
    ) -> Result<ForwardPass> {
        assert!(!graphs.is_empty(), "forward over an empty batch");
        let enrolled = self.enroll(tape);

        // Per-graph initial node embeddings.
        let mut node_x: Vec<Tensor> = Vec::with_capacity(graphs.len());
        if self.config.variant == Variant::Hpan {
            let lump = enrolled.lump.as_ref().expect("HPAN has a lump layer");
            let stats = bn_stats.as_deref_mut().expect("HPAN has batch-norm stats");
            let mut pres = Vec::with_capacity(graphs.len());
            for g in graphs {
                let xn = layers::encode(tape, &enrolled.atom_tables, g.node_feat())?;
                let xe = layers::encode(tape, &enrolled.edge_tables, g.edge_feat())?;
                pres.push(layers::lump_pre(tape, g, &xn, &xe, self.config.lump_eps)?);
            }
            let stacked = tape.concat_rows(&pres)?;
            let lumped = layers::lump_mlp(tape, &stacked, lump, stats, train)?;
            let mut offset = 0;
            for g in graphs {
                let rows: Vec<usize> = (offset..offset + g.num_nodes()).collect();
                node_x.push(tape.row_gather(&lumped, &rows)?);
                offset += g.num_nodes();
            }
        } else {
            for g in graphs {
                node_x.push(layers::encode(tape, &enrolled.atom_tables, g.node_feat())?);
            }
        }

        // Conv/pool stack per graph, then readout and head.
        let mut logits = Vec::with_capacity(graphs.len());
        for (g, x0) in graphs.iter().zip(node_x) {
            let mut g_cur: Graph = (*g).clone();
            let mut x = x0;
            for (conv, pool) in enrolled.convs.iter().zip(&enrolled.pools) {
                let weights = match (&conv.log_w, &conv.fixed) {
                    (Some(log_w), _) => ConvWeights::Trainable { log_w },
                    (None, Some(fixed)) => ConvWeights::Fixed(fixed),
                    (None, None) => unreachable!("enroll sets one of the two"),
                };
                let met = layers::met_on_tape_pinned(
                    tape,
                    &g_cur,
                    &weights,
                    self.config.normalization,
                    pins.as_deref_mut(),
                )?;
                let conv_out = layers::pan_conv(tape, &met, &x, &conv.w)?;
                x = tape.relu(&conv_out)?;
                let score = layers::pan_pool_score(tape, &x, &pool.0, &pool.1, &met.diag)?;
                let pooled = layers::pan_pool_select(tape, &g_cur, &x, &score, self.config.pool_ratio)?;
                x = pooled.xp;
                g_cur = pooled.graph;
            }
            let read = layers::mean_readout(tape, &x)?;
            logits.push(layers::mlp_head(tape, &read, &enrolled.head)?);
        }
        let logits = tape.concat_rows(&logits)?;
        Ok(ForwardPass { enrolled, logits })
    }
}

struct EnrolledConv {
    log_w: Option<Tensor>,
    fixed: Option<PathWeights>,
    w: Tensor,
}

/// The model's parameters as tape leaves for one forward pass.
pub struct Enrolled {
    atom_tables: Vec<Tensor>,
    edge_tables: Vec<Tensor>,
    lump: Option<LumpParams>,
    convs: Vec<EnrolledConv>,
    pools: Vec<(Tensor, Tensor)>,
    head: HeadParams,
}

impl Enrolled {
    /// Leaf tensors in the canonical parameter order, matching
    /// [`Model::for_each_param`] one to one.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        out.extend(self.atom_tables.iter());
        out.extend(self.edge_tables.iter());
        if let Some(l) = &self.lump {
            out.extend([&l.w1, &l.b1, &l.gamma, &l.beta, &l.w2, &l.b2]);
        }
        for (c, p) in self.convs.iter().zip(&self.pools) {
            if let Some(log_w) = &c.log_w {
                out.push(log_w);
            }
            out.push(&c.w);
            out.push(&p.0);
            out.push(&p.1);
        }
        out.extend([&self.head.w1, &self.head.b1, &self.head.w2, &self.head.b2]);
        out
    }
}

/// Output of a forward pass: the batch logits (one row per graph) plus
/// the enrolled parameters for gradient extraction.
pub struct ForwardPass {
    pub enrolled: Enrolled,
    pub logits: Tensor,
}

/// Parameter count broken down by parameter name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub items: Vec<(String, usize)>,
    pub total: usize,
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.items.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        for (name, count) in &self.items {
            writeln!(f, "{name:width$}  {count:>8}")?;
        }
        writeln!(f, "{:width$}  {:>8}", "total", self.total)
    }
}
