//! Dataset round trip through the JSON interchange format.
//!
//!     cargo run --example json_dataset
//!
//! Builds two labeled graphs in code, writes them to a JSON file, reads
//! the file back, and shows what the loader inferred: categorical
//! cardinalities per feature field come from the data itself and become
//! the embedding table sizes at model init.

use pan::data::{save_json, load_json_graphs, Dataset, Splits};
use pan::graph::{CodeMatrix, Graph};

fn main() -> pan::Result<()> {
    let triangle = Graph::new(
        3,
        vec![(0, 1), (1, 2), (0, 2)],
        CodeMatrix::from_rows(&[vec![0, 3], vec![1, 3], vec![2, 3]]),
        CodeMatrix::from_rows(&[vec![0], vec![1], vec![0]]),
        Some(true),
    )?;
    let path = Graph::new(
        4,
        vec![(0, 1), (1, 2), (2, 3)],
        CodeMatrix::from_rows(&[vec![0, 0], vec![1, 0], vec![1, 0], vec![0, 0]]),
        CodeMatrix::from_rows(&[vec![1], vec![1], vec![1]]),
        Some(false),
    )?;
    let dataset = Dataset::new(
        vec![triangle, path],
        Splits { train: vec![0, 1], valid: vec![], test: vec![] },
    )?;

    let file = std::env::temp_dir().join("pan-example-dataset.json");
    save_json(&dataset, &file)?;
    println!("wrote {}", file.display());

    let loaded = load_json_graphs(&file)?;
    println!("read back {} graphs, round trip exact: {}", loaded.len(), loaded == dataset);
    println!("node feature cardinalities: {:?}", loaded.node_cardinalities());
    println!("edge feature cardinalities: {:?}", loaded.edge_cardinalities());
    let (neg, pos) = loaded.label_histogram();
    println!("labels: {neg} negative, {pos} positive");

    std::fs::remove_file(&file).ok();
    Ok(())
}
