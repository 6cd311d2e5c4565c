//! Top-K pooling driven by the MET diagonal.
//!
//!     cargo run --example pooling
//!
//! Scores each node as X·p + beta·diag(M), keeps the ceil(ratio·n)
//! best, and induces the subgraph on the survivors. The example wires
//! this up on a 6-node "house with a tail" so the scores are easy to
//! read: with p = 0 the score is pure walk centrality and the tail,
//! which sits on the fewest closed walks, is pooled away first.

use pan::graph::{CodeMatrix, DenseMatrix, Graph};
use pan::layers::{self, ConvWeights};
use pan::met::{Normalization, PathWeights};
use pan::tape::{Tape, Tensor};

fn main() -> pan::Result<()> {
    // Nodes 0..4 form a house (4-cycle plus a roof), node 5 dangles.
    let g = Graph::new(
        6,
        vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4), (3, 5)],
        CodeMatrix::from_rows(&vec![vec![0]; 6]),
        CodeMatrix::from_rows(&vec![vec![0]; 7]),
        None,
    )?;

    let mut tape = Tape::new();
    let weights = PathWeights::boltzmann(3, 1.0)?;
    let met = layers::met_on_tape(
        &mut tape,
        &g,
        &ConvWeights::Fixed(&weights),
        Normalization::Symmetric,
    )?;

    // One feature per node, projection zeroed out: score = beta * diag(M).
    let x = Tensor::constant(&DenseMatrix::from_vec(6, 1, vec![1.0; 6]));
    let p = Tensor::constant(&DenseMatrix::zeros(1, 1));
    let beta = Tensor::scalar_constant(1.0);
    let score = layers::pan_pool_score(&mut tape, &x, &p, &beta, &met.diag)?;

    println!("node  degree  score");
    for i in 0..6 {
        let degree = g.edges().iter().filter(|&&(u, v)| u == i || v == i).count();
        println!("{i:>4}  {degree:>6}  {:.6}", score.get(i, 0));
    }

    for ratio in [0.8, 0.5, 0.2] {
        let out = layers::pan_pool_select(&mut tape, &g, &x, &score, ratio)?;
        println!(
            "\nratio {ratio}: kept {:?} ({} of 6), {} edges survive",
            out.kept,
            out.kept.len(),
            out.graph.edges().len()
        );
        for (new, &old) in out.kept.iter().enumerate() {
            println!("  node {old} -> {new}, gated feature {:.4}", out.xp.get(new, 0));
        }
    }
    Ok(())
}
