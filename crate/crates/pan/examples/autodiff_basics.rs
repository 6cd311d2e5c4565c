//! The reverse-mode tape on its own, away from any model.
//!
//!     cargo run --example autodiff_basics
//!
//! Two tiny programs are taped, differentiated, and compared against
//! hand-derived gradients.

use pan::graph::DenseMatrix;
use pan::tape::{sigmoid, Tape};

fn main() -> pan::Result<()> {
    // f(W) = mean(relu(X W)). Only the second row survives the relu,
    // so df/dW = X[1] / 2 = [1.5, -2].
    let mut tape = Tape::new();
    let x = tape.leaf(&DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, -4.0]));
    let w = tape.leaf(&DenseMatrix::from_vec(2, 1, vec![0.5, -1.0]));
    let h = tape.matmul(&x, &w)?;
    let a = tape.relu(&h)?;
    let f = tape.column_mean(&a)?;
    println!("f = {:.4} (expected 2.75)", f.item());

    let grads = tape.backward(&f)?;
    println!("df/dW = {:?} (expected [1.5, -2.0])", grads.wrt(&w));

    // Weighted binary cross-entropy at zero logits is ln 2 regardless of
    // labels, and its gradient per logit is (sigmoid(z) - y) / n.
    let mut tape = Tape::new();
    let logits = tape.leaf(&DenseMatrix::from_vec(2, 1, vec![0.0, 0.0]));
    let loss = tape.weighted_bce(&logits, &[1.0, 0.0], 1.0)?;
    println!("\nbce at zero logits = {:.12} (ln 2 = {:.12})", loss.item(), 2.0f64.ln());

    let grads = tape.backward(&loss)?;
    let expect: Vec<f64> = [(0.0, 1.0), (0.0, 0.0)]
        .iter()
        .map(|&(z, y)| (sigmoid(z) - y) / 2.0)
        .collect();
    println!("dL/dz = {:?}", grads.wrt(&logits));
    println!("hand  = {expect:?}");
    Ok(())
}
