//! Finite-difference verification of the tape gradients through a whole
//! model: eval-mode forward (batch norm frozen), the normalization
//! partition pinned to its base value, central differences per parameter
//! entry, and a per-group report.

use crate::error::{Error, Result};
use crate::graph::{CodeMatrix, Graph};
use crate::layers::ZPins;
use crate::model::{Model, ModelConfig, Variant};
use crate::tape::Tape;
use crate::train::weighted_bce;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Softens the relative error for coordinates whose gradient vanishes:
/// an entry passes iff |fd - grad| <= tol * (scale + ERR_SOFTENING), so
/// at the standard tol of 1e-4 a zero-gradient coordinate still needs
/// 1e-8 absolute agreement, without amplifying subtraction noise.
const ERR_SOFTENING: f64 = 1e-4;

/// Verdict for one parameter group (one named tensor).
#[derive(Debug, Clone, serde::Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub entries: usize,
    /// max over entries of |fd - grad| / (max(|fd|, |grad|) + 1e-4).
    pub max_err: f64,
    pub pass: bool,
    /// Set when a failing entry's finite difference is step-size
    /// dependent (h vs h/2 disagree) or the perturbation moved the node
    /// selection: the probe crossed a kink, so the mismatch does not
    /// indict the gradient.
    pub near_kink: bool,
}

/// Full gradient-check outcome.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradReport {
    pub variant: Variant,
    pub h: f64,
    pub tol: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradReport {
    pub fn all_pass(&self) -> bool {
        self.groups.iter().all(|g| g.pass)
    }

    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.max_err).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} gradient check: h = {:.1e}, tol = {:.1e}",
            self.variant, self.h, self.tol
        )?;
        let widest = self.groups.iter().map(|g| g.name.len()).max().unwrap_or(0);
        for g in &self.groups {
            writeln!(
                f,
                "  {:<widest$}  {:>5} entries  max rel err {:.3e}  {}{}",
                g.name,
                g.entries,
                g.max_err,
                if g.pass { "pass" } else { "FAIL" },
                if g.near_kink { " (near kink)" } else { "" },
            )?;
        }
        write!(
            f,
            "worst {:.3e} over {} groups: {}",
            self.worst(),
            self.groups.len(),
            if self.all_pass() { "PASS" } else { "FAIL" }
        )
    }
}

/// Classifies one coordinate: softened relative error, pass/fail, and
/// whether a failing finite difference was step-size dependent.
fn entry_verdict(grad: f64, fd: f64, fd_half: Option<f64>, tol: f64) -> (f64, bool, bool) {
    let scale = fd.abs().max(grad.abs()) + ERR_SOFTENING;
    let err = (fd - grad).abs() / scale;
    let pass = err < tol;
    let kink = match fd_half {
        Some(fd2) if !pass => (fd - fd2).abs() / scale > tol,
        _ => false,
    };
    (err, pass, kink)
}

struct LossProbe<'a> {
    graphs: &'a [&'a Graph],
    labels: Vec<f64>,
    alpha: f64,
    pins: ZPins,
}

impl<'a> LossProbe<'a> {
    /// Loss of the perturbed model under pinned partitions. `None` means
    /// the perturbation moved the node selection (a kink, not a value).
    fn eval(&mut self, model: &Model) -> Result<Option<f64>> {
        self.pins.rewind();
        let mut tape = Tape::new();
        let pass = match model.forward_eval_pinned(&mut tape, self.graphs, &mut self.pins) {
            Ok(p) => p,
            Err(Error::ShapeMismatch { op: "frozen_z", .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let logits: Vec<f64> = (0..pass.logits.rows()).map(|i| pass.logits.get(i, 0)).collect();
        let labels: Vec<bool> = self.labels.iter().map(|&y| y == 1.0).collect();
        Ok(Some(weighted_bce(&logits, &labels, self.alpha)))
    }
}

fn perturbed(model: &Model, slot: usize, entry: usize, delta: f64) -> Model {
    let mut work = model.clone();
    let mut i = 0;
    work.for_each_param_mut(|m| {
        if i == slot {
            m.data_mut()[entry] += delta;
        }
        i += 1;
    });
    work
}

/// Checks every parameter group of `model` on `graphs` against central
/// finite differences of the eval-mode loss.
///
/// The base forward captures the normalization partitions; perturbed
/// forwards replay them, so the probed function is exactly the one the
/// tape differentiates (frozen z, frozen batch norm). The step-halving
/// probe runs only for failing entries.
pub fn check_model(model: &Model, graphs: &[&Graph], h: f64, tol: f64) -> Result<GradReport> {
    assert!(h > 0.0 && tol > 0.0, "step and tolerance must be positive");
    let labels: Vec<f64> = graphs
        .iter()
        .map(|g| g.label().expect("gradcheck fixture graphs are labeled") as u8 as f64)
        .collect();
    let mut probe = LossProbe {
        graphs,
        labels: labels.clone(),
        alpha: model.config().effective_alpha(),
        pins: ZPins::new(),
    };

    // Base pass: capture partitions and take the tape gradient.
    let mut tape = Tape::new();
    let pass = model.forward_eval_pinned(&mut tape, graphs, &mut probe.pins)?;
    let loss = tape.weighted_bce(&pass.logits, &labels, probe.alpha)?;
    let grads = tape.backward(&loss)?;
    let params = pass.enrolled.param_tensors();
    let mut names = Vec::new();
    model.for_each_param(|name, _| names.push(name));
    assert_eq!(names.len(), params.len(), "canonical walk drift");

    let mut groups = Vec::with_capacity(names.len());
    for (slot, name) in names.iter().enumerate() {
        let grad = grads.wrt(params[slot]);
        let mut max_err = 0.0f64;
        let mut pass_group = true;
        let mut near_kink = false;
        for entry in 0..grad.len() {
            let plus = probe.eval(&perturbed(model, slot, entry, h))?;
            let minus = probe.eval(&perturbed(model, slot, entry, -h))?;
            let fd = match (plus, minus) {
                (Some(p), Some(m)) => (p - m) / (2.0 * h),
                _ => {
                    pass_group = false;
                    near_kink = true;
                    max_err = f64::INFINITY;
                    continue;
                }
            };
            let (err, ok, _) = entry_verdict(grad[entry], fd, None, tol);
            let fd_half = if ok {
                None
            } else {
                let p2 = probe.eval(&perturbed(model, slot, entry, h / 2.0))?;
                let m2 = probe.eval(&perturbed(model, slot, entry, -h / 2.0))?;
                match (p2, m2) {
                    (Some(p), Some(m)) => Some((p - m) / h),
                    _ => None,
                }
            };
            let (err, ok, kink) = match fd_half {
                Some(_) => entry_verdict(grad[entry], fd, fd_half, tol),
                None => (err, ok, false),
            };
            max_err = max_err.max(err);
            pass_group &= ok;
            near_kink |= kink;
        }
        groups.push(GroupCheck {
            name: name.clone(),
            entries: grad.len(),
            max_err,
            pass: pass_group,
            near_kink,
        });
    }
    Ok(GradReport {
        variant: model.config().variant,
        h,
        tol,
        groups,
    })
}

/// The 5-node fixture pair: a house (4-cycle plus a roof apex, one
/// triangle, label 1) and a 5-cycle (triangle-free, label 0). Both carry
/// small categorical features so every encoder table participates.
pub fn fixture_graphs() -> Vec<Graph> {
    let house = Graph::new(
        5,
        vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)],
        CodeMatrix::from_rows(&[vec![0], vec![1], vec![2], vec![0], vec![1]]),
        CodeMatrix::from_rows(&[vec![0], vec![1], vec![0], vec![1], vec![0], vec![1]]),
        Some(true),
    )
    .expect("fixture is valid");
    let ring = Graph::new(
        5,
        vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)],
        CodeMatrix::from_rows(&[vec![2], vec![1], vec![0], vec![1], vec![2]]),
        CodeMatrix::from_rows(&[vec![1], vec![0], vec![1], vec![0], vec![1]]),
        Some(false),
    )
    .expect("fixture is valid");
    vec![house, ring]
}

/// Reduced configuration used by the gradient suite: small embeddings
/// keep the entry-by-entry probing fast while every layer kind stays
/// exercised.
///
/// Seed 1, not 0: at seed 0 the PAN head initializes with every hidden
/// relu unit off for both fixture graphs, which makes most gradients
/// exactly zero and the check vacuous. Seed 1 has live gradients in
/// every group for both variants.
pub fn fixture_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        emb_dim: 8,
        conv_cutoffs: vec![3, 2],
        seed: 1,
        ..ModelConfig::default()
    }
}

/// Builds the fixture model for `config` and runs [`check_model`].
pub fn check_fixture(config: &ModelConfig, h: f64, tol: f64) -> Result<GradReport> {
    let graphs = fixture_graphs();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = Model::init(config.clone(), &[3], &[2], &mut rng)?;
    let refs: Vec<&Graph> = graphs.iter().collect();
    check_model(&model, &refs, h, tol)
}
