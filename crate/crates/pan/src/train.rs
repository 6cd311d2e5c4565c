//! Mini-batch training: weighted cross entropy, Adam, per-epoch records,
//! and validation-based model selection.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::roc_auc;
use crate::model::{Model, ModelConfig};
use crate::tape::{softplus, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::Instant;

/// Class-weighted binary cross entropy over logits, the same quantity the
/// tape op computes:
///
/// ```text
/// mean_i [ alpha * y_i * softplus(-z_i) + (1 - y_i) * softplus(z_i) ]
/// ```
///
/// softplus keeps the value finite for any logit magnitude.
pub fn weighted_bce(logits: &[f64], labels: &[bool], alpha: f64) -> f64 {
    assert_eq!(logits.len(), labels.len(), "one logit per label");
    assert!(!logits.is_empty(), "empty batch");
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            if y {
                alpha * softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    total / logits.len() as f64
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8) and
/// bias correction. Moment slots are keyed by position in the canonical
/// parameter walk, so the walk order must not change between steps.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Advances the shared step counter; call once per batch, before the
    /// per-parameter updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to the parameter in `slot`.
    pub fn update_one(&mut self, slot: usize, grad: &[f64], data: &mut [f64]) {
        assert!(self.step > 0, "begin_step before update_one");
        assert_eq!(grad.len(), data.len(), "gradient length");
        while self.m.len() <= slot {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[slot].is_empty() {
            self.m[slot] = vec![0.0; data.len()];
            self.v[slot] = vec![0.0; data.len()];
        }
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..data.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One line of the training log.
///
/// `seconds` is wall-clock time and is the only field that varies between
/// reruns of the same seed; everything else is bit-reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub seconds: f64,
}

/// Training outcome: the selected model plus the full log.
pub struct TrainResult {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Epoch whose model was kept; None means the final epoch's model
    /// (no usable validation signal).
    pub best_epoch: Option<usize>,
    pub optimizer_steps: u64,
}

/// ROC-AUC of the model's logits over the given graph indices.
///
/// Every referenced graph must be labeled. Returns DegenerateLabels when
/// only one class is present.
pub fn evaluate(model: &Model, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    let mut scores = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let g = dataset.graph(i);
        let label = g.label().ok_or_else(|| Error::SchemaViolation {
            path: format!("graphs[{i}]"),
            detail: "unlabeled graph in an evaluation split".into(),
        })?;
        scores.push(model.logit(g)?);
        labels.push(label);
    }
    roc_auc(&scores, &labels)
}

/// [`evaluate`], with "no usable signal" (empty split or one class)
/// collapsed to None instead of an error.
pub fn evaluate_or_none(model: &Model, dataset: &Dataset, indices: &[usize]) -> Result<Option<f64>> {
    if indices.is_empty() {
        return Ok(None);
    }
    match evaluate(model, dataset, indices) {
        Ok(auc) => Ok(Some(auc)),
        Err(Error::DegenerateLabels) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs one optimizer step on a batch. Returns the batch loss.
fn train_step(model: &mut Model, batch: &[&Graph], alpha: f64, adam: &mut Adam) -> Result<f64> {
    let labels: Vec<f64> = batch
        .iter()
        .map(|g| g.label().expect("training graphs are labeled") as u8 as f64)
        .collect();
    let mut tape = Tape::new();
    let pass = model.forward_train(&mut tape, batch)?;
    let loss = tape.weighted_bce(&pass.logits, &labels, alpha)?;
    let grads = tape.backward(&loss)?;
    let params = pass.enrolled.param_tensors();
    adam.begin_step();
    let mut slot = 0usize;
    model.for_each_param_mut(|m| {
        let g = grads.wrt(params[slot]);
        adam.update_one(slot, &g, m.data_mut());
        slot += 1;
    });
    debug_assert_eq!(slot, params.len(), "canonical walk drift");
    Ok(loss.item())
}

/// Trains a fresh model from `config` on the dataset's train split.
///
/// Each epoch shuffles the train indices, takes batches of
/// `config.batch_size` (final partial batch included), steps Adam once
/// per batch, then scores the validation and test splits. The model kept
/// is the one with the best validation AUC (earliest epoch on ties);
/// without a usable validation signal the final model is kept.
///
/// `on_epoch` sees each record as it is produced.
pub fn train(
    config: &ModelConfig,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainResult> {
    config.validate()?;
    if dataset.splits().train.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::init(
        config.clone(),
        dataset.node_cardinalities(),
        dataset.edge_cardinalities(),
        &mut rng,
    )?;
    let alpha = config.effective_alpha();
    let mut adam = Adam::new(config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut order: Vec<usize> = dataset.splits().train.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Graph> = chunk.iter().map(|&i| dataset.graph(i)).collect();
            loss_sum += train_step(&mut model, &batch, alpha, &mut adam)? * batch.len() as f64;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / order.len() as f64,
            val_auc: evaluate_or_none(&model, dataset, &dataset.splits().valid)?,
            test_auc: evaluate_or_none(&model, dataset, &dataset.splits().test)?,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(auc) = record.val_auc {
            if best.as_ref().is_none_or(|(b, _, _)| auc > *b) {
                best = Some((auc, epoch, model.clone()));
            }
        }
        on_epoch(&record);
        history.push(record);
    }
    let (best_epoch, model) = match best {
        Some((_, epoch, snapshot)) => (Some(epoch), snapshot),
        None => (None, model),
    };
    Ok(TrainResult {
        model,
        history,
        best_epoch,
        optimizer_steps: adam.steps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticTask};
    use crate::model::Variant;
    use crate::tape::sigmoid;

    fn tiny_config(epochs: usize) -> ModelConfig {
        ModelConfig {
            variant: Variant::Hpan,
            emb_dim: 4,
            conv_cutoffs: vec![2],
            alpha: Some(1.0),
            epochs,
            batch_size: 2,
            seed: 11,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn bce_balanced_zero_logit_is_ln_two() {
        let loss = weighted_bce(&[0.0], &[false], 5.0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_positive_zero_logit_scales_with_alpha() {
        let loss = weighted_bce(&[0.0], &[true], 5.0);
        assert!((loss - 5.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_with_unit_alpha_is_plain_cross_entropy() {
        let logits = [1.3, -0.4, 2.0, -3.1];
        let labels = [true, false, false, true];
        let plain: f64 = logits
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| {
                let p = sigmoid(z);
                if y {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / 4.0;
        assert!((weighted_bce(&logits, &labels, 1.0) - plain).abs() < 1e-12);
    }

    #[test]
    fn bce_confident_correct_prediction_vanishes() {
        assert!(weighted_bce(&[40.0], &[true], 10.0) < 1e-12);
        assert!(weighted_bce(&[-40.0], &[false], 10.0) < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut adam = Adam::new(1e-3);
        let mut data = vec![1.5, -2.0];
        adam.begin_step();
        adam.update_one(0, &[0.0, 0.0], &mut data);
        assert_eq!(data, vec![1.5, -2.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_first_step_has_magnitude_near_lr() {
        // With bias correction, m_hat = g and v_hat = g^2 on step one, so
        // the update is lr * sign(g) up to eps.
        let mut adam = Adam::new(1e-3);
        let mut data = vec![0.0, 0.0];
        adam.begin_step();
        adam.update_one(0, &[0.7, -0.01], &mut data);
        assert!((data[0] + 1e-3).abs() < 1e-9);
        assert!((data[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adam_is_bit_deterministic() {
        let run = || {
            let mut adam = Adam::new(3e-4);
            let mut data = vec![0.3, -0.6, 0.9];
            for step in 0..50 {
                adam.begin_step();
                let grad: Vec<f64> = data.iter().map(|&x| x * (step as f64).cos()).collect();
                adam.update_one(0, &grad, &mut data);
            }
            data
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn one_epoch_steps_once_per_batch() {
        // 8 graphs stratified 80/10/10 leaves 2 train graphs per class.
        let ds = make_synthetic(SyntheticTask::TriangleDetection, 8, 2).unwrap();
        assert_eq!(ds.splits().train.len(), 4);
        let result = train(&tiny_config(1), &ds, |_| {}).unwrap();
        assert_eq!(result.optimizer_steps, 2);
        assert_eq!(result.history.len(), 1);
    }

    #[test]
    fn loss_decreases_when_overfitting() {
        let ds = make_synthetic(SyntheticTask::TriangleDetection, 8, 4).unwrap();
        let config = ModelConfig {
            learning_rate: 3e-2,
            ..tiny_config(10)
        };
        let result = train(&config, &ds, |_| {}).unwrap();
        let first = result.history.first().unwrap().mean_loss;
        let last = result.history.last().unwrap().mean_loss;
        assert!(
            last < first,
            "loss should fall on a 4-graph problem: {first} -> {last}"
        );
    }

    #[test]
    fn training_log_is_reproducible_except_wall_time() {
        let ds = make_synthetic(SyntheticTask::TriangleDetection, 10, 9).unwrap();
        let a = train(&tiny_config(3), &ds, |_| {}).unwrap();
        let b = train(&tiny_config(3), &ds, |_| {}).unwrap();
        assert_eq!(a.best_epoch, b.best_epoch);
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.epoch, rb.epoch);
            assert_eq!(ra.mean_loss.to_bits(), rb.mean_loss.to_bits());
            assert_eq!(ra.val_auc, rb.val_auc);
            assert_eq!(ra.test_auc, rb.test_auc);
        }
        let collect = |m: &Model| {
            let mut all = Vec::new();
            m.for_each_param(|_, p| all.extend_from_slice(p.data()));
            all
        };
        assert_eq!(collect(&a.model), collect(&b.model));
    }

    #[test]
    fn callback_sees_every_epoch() {
        let ds = make_synthetic(SyntheticTask::TriangleDetection, 6, 2).unwrap();
        let mut seen = Vec::new();
        train(&tiny_config(3), &ds, |r| seen.push(r.epoch)).unwrap();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn best_epoch_tracks_validation() {
        let ds = make_synthetic(SyntheticTask::TriangleDetection, 20, 5).unwrap();
        let result = train(&tiny_config(4), &ds, |_| {}).unwrap();
        let best = result.best_epoch.expect("validation split is usable");
        let best_auc = result.history[best].val_auc.unwrap();
        for r in &result.history {
            assert!(r.val_auc.unwrap() <= best_auc);
        }
        // The kept model reproduces the recorded validation AUC.
        let auc = evaluate(&result.model, &ds, &ds.splits().valid).unwrap();
        assert_eq!(auc, best_auc);
    }

    #[test]
    fn empty_validation_keeps_final_model() {
        let ds = make_synthetic(SyntheticTask::TriangleDetection, 6, 2).unwrap();
        let all_train = crate::data::Dataset::new(
            ds.graphs().to_vec(),
            crate::data::Splits::all_train(ds.len()),
        )
        .unwrap();
        let result = train(&tiny_config(2), &all_train, |_| {}).unwrap();
        assert_eq!(result.best_epoch, None);
        assert!(result.history.iter().all(|r| r.val_auc.is_none()));
    }
}
