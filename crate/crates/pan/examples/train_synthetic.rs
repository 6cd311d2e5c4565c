//! End-to-end training on the built-in triangle-detection task.
//!
//!     cargo run --release --example train_synthetic
//!
//! Builds 40 small random graphs (half contain a triangle), trains a
//! two-layer HPAN model, and reports ROC-AUC per split. Rerunning gives
//! bit-identical numbers: the only randomness is the seeded generator.

use pan::data::{make_synthetic, SyntheticTask};
use pan::model::ModelConfig;
use pan::train::{evaluate_or_none, train};

fn main() -> pan::Result<()> {
    let dataset = make_synthetic(SyntheticTask::TriangleDetection, 40, 7)?;
    let (neg, pos) = dataset.label_histogram();
    println!(
        "dataset: {} graphs, {} negative / {} positive, splits {}/{}/{}",
        dataset.len(),
        neg,
        pos,
        dataset.splits().train.len(),
        dataset.splits().valid.len(),
        dataset.splits().test.len(),
    );

    let config = ModelConfig {
        emb_dim: 16,
        conv_cutoffs: vec![3, 2],
        alpha: Some(1.0), // classes are balanced here
        epochs: 60,
        learning_rate: 3e-3,
        seed: 7,
        ..ModelConfig::default()
    };
    println!(
        "model: {:?}, emb_dim {}, cutoffs {:?}, {} epochs\n",
        config.variant, config.emb_dim, config.conv_cutoffs, config.epochs
    );

    let result = train(&config, &dataset, |r| {
        if r.epoch % 10 == 0 || r.epoch + 1 == config.epochs {
            let val = r.val_auc.map_or("n/a".into(), |a| format!("{a:.4}"));
            println!("epoch {:>3}  loss {:.6}  val auc {}", r.epoch, r.mean_loss, val);
        }
    })?;

    match result.best_epoch {
        Some(e) => println!("\nkept the model from epoch {e} (best validation AUC)"),
        None => println!("\nno usable validation signal, kept the final model"),
    }
    let splits = dataset.splits();
    for (name, idx) in [
        ("train", &splits.train),
        ("valid", &splits.valid),
        ("test", &splits.test),
    ] {
        match evaluate_or_none(&result.model, &dataset, idx)? {
            Some(auc) => println!("{name:>5} roc-auc: {auc:.6}"),
            None => println!("{name:>5} roc-auc: n/a"),
        }
    }
    Ok(())
}
