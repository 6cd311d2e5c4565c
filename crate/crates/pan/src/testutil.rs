//! Shared helpers for unit tests. Compiled only under `cfg(test)`.

use crate::graph::{CodeMatrix, Graph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random connected-ish graph with up to `max_nodes` nodes and no
/// duplicate edges. Node and edge features are single small codes so the
/// result is usable wherever features are required.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> Graph {
    let n = rng.gen_range(1..=max_nodes);
    let mut edges = Vec::new();
    for u in 1..n {
        let v = rng.gen_range(0..u);
        edges.push((v, u));
    }
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen_bool(0.15) && !edges.contains(&(u, v)) {
                edges.push((u, v));
            }
        }
    }
    let node_rows: Vec<Vec<i64>> = (0..n).map(|_| vec![rng.gen_range(0..3)]).collect();
    let edge_rows: Vec<Vec<i64>> = edges.iter().map(|_| vec![rng.gen_range(0..2)]).collect();
    Graph::new(
        n,
        edges,
        CodeMatrix::from_rows(&node_rows),
        CodeMatrix::from_rows(&edge_rows),
        Some(rng.gen_bool(0.5)),
    )
    .unwrap()
}
