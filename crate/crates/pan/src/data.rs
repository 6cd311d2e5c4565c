//! Dataset ingestion: the OGB raw CSV layout, a portable JSON format,
//! split handling, cardinality inference, and a synthetic task for
//! desk-scale end-to-end checks.

use crate::error::{Error, Result};
use crate::graph::{CodeMatrix, Graph};
use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

/// Graph indices per split. Indices must be disjoint and in range; a
/// split may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Everything in train; used when a source carries no split info.
    pub fn all_train(n: usize) -> Self {
        Splits {
            train: (0..n).collect(),
            valid: Vec::new(),
            test: Vec::new(),
        }
    }
}

/// An immutable collection of labeled graphs with splits and the per-field
/// code cardinalities the encoders need.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    graphs: Vec<Graph>,
    splits: Splits,
    node_cardinalities: Vec<usize>,
    edge_cardinalities: Vec<usize>,
}

impl Dataset {
    /// Validates splits and feature consistency, then infers
    /// cardinalities.
    pub fn new(graphs: Vec<Graph>, splits: Splits) -> Result<Dataset> {
        if graphs.is_empty() {
            return Err(Error::SchemaViolation {
                path: "graphs".into(),
                detail: "dataset must contain at least one graph".into(),
            });
        }
        let mut seen = vec![false; graphs.len()];
        for (name, idx) in [
            ("train", &splits.train),
            ("valid", &splits.valid),
            ("test", &splits.test),
        ] {
            for (k, &i) in idx.iter().enumerate() {
                if i >= graphs.len() {
                    return Err(Error::SchemaViolation {
                        path: format!("splits.{name}[{k}]"),
                        detail: format!("graph index {i} out of range 0..{}", graphs.len()),
                    });
                }
                if seen[i] {
                    return Err(Error::SchemaViolation {
                        path: format!("splits.{name}[{k}]"),
                        detail: format!("graph index {i} appears in more than one split"),
                    });
                }
                seen[i] = true;
            }
        }
        let (node_cardinalities, edge_cardinalities) = infer_cardinalities(&graphs)?;
        Ok(Dataset {
            graphs,
            splits,
            node_cardinalities,
            edge_cardinalities,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn graph(&self, i: usize) -> &Graph {
        &self.graphs[i]
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn node_cardinalities(&self) -> &[usize] {
        &self.node_cardinalities
    }

    pub fn edge_cardinalities(&self) -> &[usize] {
        &self.edge_cardinalities
    }

    /// (negatives, positives) over all labeled graphs.
    pub fn label_histogram(&self) -> (usize, usize) {
        let pos = self
            .graphs
            .iter()
            .filter(|g| g.label() == Some(true))
            .count();
        let labeled = self.graphs.iter().filter(|g| g.label().is_some()).count();
        (labeled - pos, pos)
    }
}

/// Per-field max code + 1 over all graphs. Field counts must agree across
/// graphs; zero-row feature matrices are field-agnostic and skipped.
pub fn infer_cardinalities(graphs: &[Graph]) -> Result<(Vec<usize>, Vec<usize>)> {
    fn fold(
        graphs: &[Graph],
        pick: impl Fn(&Graph) -> &CodeMatrix,
        what: &str,
    ) -> Result<Vec<usize>> {
        let mut dims: Option<Vec<usize>> = None;
        for (gi, g) in graphs.iter().enumerate() {
            let feat = pick(g);
            if feat.rows() == 0 {
                continue;
            }
            let dims = match &mut dims {
                Some(d) if d.len() != feat.cols() => {
                    return Err(Error::SchemaViolation {
                        path: format!("graphs[{gi}].{what}"),
                        detail: format!("{} fields, earlier graphs have {}", feat.cols(), d.len()),
                    });
                }
                Some(d) => d,
                None => dims.insert(vec![0; feat.cols()]),
            };
            for r in 0..feat.rows() {
                for f in 0..feat.cols() {
                    let code = feat.get(r, f);
                    if code < 0 {
                        return Err(Error::SchemaViolation {
                            path: format!("graphs[{gi}].{what}[{r}][{f}]"),
                            detail: format!("negative feature code {code}"),
                        });
                    }
                    dims[f] = dims[f].max(code as usize + 1);
                }
            }
        }
        Ok(dims.unwrap_or_default())
    }
    Ok((
        fold(graphs, Graph::node_feat, "node_feat")?,
        fold(graphs, Graph::edge_feat, "edge_feat")?,
    ))
}

fn open_csv(dir: &Path, stem: &str) -> Result<(Box<dyn Read>, String)> {
    let plain = dir.join(format!("{stem}.csv"));
    let gz = dir.join(format!("{stem}.csv.gz"));
    if plain.is_file() {
        Ok((Box::new(File::open(&plain)?), format!("{stem}.csv")))
    } else if gz.is_file() {
        Ok((
            Box::new(GzDecoder::new(File::open(&gz)?)),
            format!("{stem}.csv.gz"),
        ))
    } else {
        Err(Error::MissingFile(plain))
    }
}

/// Reads a headerless CSV of integers, all rows the same width.
fn read_int_csv(dir: &Path, stem: &str) -> Result<Vec<Vec<i64>>> {
    let (reader, name) = open_csv(dir, stem)?;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(reader));
    let mut rows = Vec::new();
    for (line, record) in csv.records().enumerate() {
        let record = record.map_err(|e| Error::NonIntegerField {
            file: name.clone(),
            line: line + 1,
            text: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter() {
            let trimmed = field.trim();
            let value: i64 = trimmed.parse().map_err(|_| Error::NonIntegerField {
                file: name.clone(),
                line: line + 1,
                text: trimmed.to_string(),
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_scalar_csv(dir: &Path, stem: &str) -> Result<Vec<i64>> {
    read_int_csv(dir, stem)?
        .into_iter()
        .enumerate()
        .map(|(line, row)| match row.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::NonIntegerField {
                file: format!("{stem}.csv"),
                line: line + 1,
                text: format!("expected one column, got {}", row.len()),
            }),
        })
        .collect()
}

/// A loaded dataset plus non-fatal observations from ingestion.
#[derive(Debug)]
pub struct OgbLoad {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Loads the OGB raw CSV layout from `dir`.
///
/// Expects headerless edge.csv (src,dst with both directions listed),
/// num-node-list.csv / num-edge-list.csv (per-graph counts; edge counts
/// are directed rows), node-feat.csv / edge-feat.csv, graph-label.csv,
/// and split index files train.csv / valid.csv / test.csv. Each file may
/// be gzip-compressed with a .csv.gz suffix.
///
/// The paired directed rows (u,v) and (v,u) collapse to one undirected
/// edge that keeps the first row's features. A direction without its
/// mate is kept as an undirected edge and reported as a warning, as is a
/// feature disagreement between mates.
pub fn load_ogb_raw(dir: impl AsRef<Path>) -> Result<OgbLoad> {
    let dir = dir.as_ref();
    let num_nodes = read_scalar_csv(dir, "num-node-list")?;
    let num_edges = read_scalar_csv(dir, "num-edge-list")?;
    if num_nodes.len() != num_edges.len() {
        return Err(Error::RowCountMismatch {
            what: "num-edge-list".into(),
            expected: num_nodes.len(),
            actual: num_edges.len(),
        });
    }
    let n_graphs = num_nodes.len();
    let edges = read_int_csv(dir, "edge")?;
    let node_feat = read_int_csv(dir, "node-feat")?;
    let edge_feat = read_int_csv(dir, "edge-feat")?;
    let labels = read_scalar_csv(dir, "graph-label")?;

    let total_nodes: usize = num_nodes.iter().map(|&n| n as usize).sum();
    let total_edges: usize = num_edges.iter().map(|&n| n as usize).sum();
    if node_feat.len() != total_nodes {
        return Err(Error::RowCountMismatch {
            what: "node-feat".into(),
            expected: total_nodes,
            actual: node_feat.len(),
        });
    }
    if edge_feat.len() != total_edges {
        return Err(Error::RowCountMismatch {
            what: "edge-feat".into(),
            expected: total_edges,
            actual: edge_feat.len(),
        });
    }
    if edges.len() != total_edges {
        return Err(Error::RowCountMismatch {
            what: "edge".into(),
            expected: total_edges,
            actual: edges.len(),
        });
    }
    if labels.len() != n_graphs {
        return Err(Error::RowCountMismatch {
            what: "graph-label".into(),
            expected: n_graphs,
            actual: labels.len(),
        });
    }

    let mut warnings = Vec::new();
    let mut graphs = Vec::with_capacity(n_graphs);
    let mut node_cursor = 0usize;
    let mut edge_cursor = 0usize;
    for g in 0..n_graphs {
        let n = num_nodes[g] as usize;
        let m = num_edges[g] as usize;
        let mut undirected: Vec<(usize, usize)> = Vec::new();
        let mut feats: Vec<Vec<i64>> = Vec::new();
        let mut by_key: HashMap<(usize, usize), usize> = HashMap::new();
        let mut pair_count: Vec<usize> = Vec::new();
        for row in edge_cursor..edge_cursor + m {
            let parts = &edges[row];
            if parts.len() != 2 || parts[0] < 0 || parts[1] < 0 {
                return Err(Error::NonIntegerField {
                    file: "edge.csv".into(),
                    line: row + 1,
                    text: format!("{parts:?}"),
                });
            }
            let (u, v) = (parts[0] as usize, parts[1] as usize);
            let key = (u.min(v), u.max(v));
            match by_key.get(&key) {
                None => {
                    by_key.insert(key, undirected.len());
                    undirected.push((u, v));
                    feats.push(edge_feat[row].clone());
                    pair_count.push(1);
                }
                Some(&e) => {
                    pair_count[e] += 1;
                    if feats[e] != edge_feat[row] {
                        warnings.push(format!(
                            "graph {g}: edge ({u}, {v}) features disagree between directions; keeping the first row"
                        ));
                    }
                }
            }
        }
        for (e, &count) in pair_count.iter().enumerate() {
            let (u, v) = undirected[e];
            if count == 1 && u != v {
                warnings.push(format!(
                    "graph {g}: directed edge ({u}, {v}) has no reverse row; kept as undirected"
                ));
            }
        }
        let label = match labels[g] {
            0 => false,
            1 => true,
            other => return Err(Error::BadLabel(other)),
        };
        let node_rows = &node_feat[node_cursor..node_cursor + n];
        graphs.push(Graph::new(
            n,
            undirected,
            CodeMatrix::from_rows(node_rows),
            CodeMatrix::from_rows(&feats),
            Some(label),
        )?);
        node_cursor += n;
        edge_cursor += m;
    }

    let splits = Splits {
        train: read_scalar_csv(dir, "train")?.iter().map(|&i| i as usize).collect(),
        valid: read_scalar_csv(dir, "valid")?.iter().map(|&i| i as usize).collect(),
        test: read_scalar_csv(dir, "test")?.iter().map(|&i| i as usize).collect(),
    };
    Ok(OgbLoad {
        dataset: Dataset::new(graphs, splits)?,
        warnings,
    })
}

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    #[serde(default)]
    node_feat: Vec<Vec<i64>>,
    #[serde(default)]
    edge_feat: Vec<Vec<i64>>,
    #[serde(default)]
    label: Option<i64>,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    graphs: Vec<JsonGraph>,
    #[serde(default)]
    splits: Option<Splits>,
}

/// Loads the portable JSON format; splits default to all-train when the
/// document has none.
pub fn load_json_graphs(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path.as_ref()).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(PathBuf::from(path.as_ref())),
        _ => Error::Io(e),
    })?;
    let doc: JsonDataset = serde_json::from_reader(BufReader::new(file))?;
    if doc.graphs.is_empty() {
        return Err(Error::SchemaViolation {
            path: "graphs".into(),
            detail: "must contain at least one graph".into(),
        });
    }
    let mut graphs = Vec::with_capacity(doc.graphs.len());
    for (gi, jg) in doc.graphs.iter().enumerate() {
        let label = match jg.label {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(other) => {
                return Err(Error::SchemaViolation {
                    path: format!("graphs[{gi}].label"),
                    detail: format!("label must be 0 or 1, got {other}"),
                });
            }
        };
        let ragged = |rows: &[Vec<i64>]| rows.iter().any(|r| r.len() != rows[0].len());
        if ragged(&jg.node_feat) {
            return Err(Error::SchemaViolation {
                path: format!("graphs[{gi}].node_feat"),
                detail: "rows have differing widths".into(),
            });
        }
        if ragged(&jg.edge_feat) {
            return Err(Error::SchemaViolation {
                path: format!("graphs[{gi}].edge_feat"),
                detail: "rows have differing widths".into(),
            });
        }
        let graph = Graph::new(
            jg.num_nodes,
            jg.edges.clone(),
            CodeMatrix::from_rows(&jg.node_feat),
            CodeMatrix::from_rows(&jg.edge_feat),
            label,
        )
        .map_err(|e| match e {
            Error::OutOfRangeEndpoint { index, .. } | Error::DuplicateEdge { second: index, .. } => {
                Error::SchemaViolation {
                    path: format!("graphs[{gi}].edges[{index}]"),
                    detail: e.to_string(),
                }
            }
            Error::FeatureShapeMismatch { what, .. } => Error::SchemaViolation {
                path: format!("graphs[{gi}].{what}"),
                detail: e.to_string(),
            },
            other => other,
        })?;
        graphs.push(graph);
    }
    let n = graphs.len();
    Dataset::new(graphs, doc.splits.unwrap_or_else(|| Splits::all_train(n)))
}

/// Writes a dataset in the JSON format [`load_json_graphs`] reads.
/// Loading the result reproduces the dataset exactly.
pub fn save_json(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let doc = JsonDataset {
        graphs: ds
            .graphs
            .iter()
            .map(|g| JsonGraph {
                num_nodes: g.num_nodes(),
                edges: g.edges().to_vec(),
                node_feat: (0..g.node_feat().rows())
                    .map(|i| g.node_feat().row(i).to_vec())
                    .collect(),
                edge_feat: (0..g.edge_feat().rows())
                    .map(|i| g.edge_feat().row(i).to_vec())
                    .collect(),
                label: g.label().map(i64::from),
            })
            .collect(),
        splits: Some(ds.splits.clone()),
    };
    let file = File::create(path.as_ref())?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &doc)?;
    Ok(())
}

/// Synthetic tasks for end-to-end checks without external data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticTask {
    TriangleDetection,
}

/// Generates a balanced labeled dataset. For triangle detection, label 1
/// graphs contain at least one triangle and label 0 graphs none; sizes
/// are 5 to 10 nodes; node and edge features are a single constant field.
/// Splits are stratified 80/10/10 per class. Fully determined by `seed`.
pub fn make_synthetic(task: SyntheticTask, n_graphs: usize, seed: u64) -> Result<Dataset> {
    let SyntheticTask::TriangleDetection = task;
    if n_graphs == 0 || n_graphs % 2 != 0 {
        return Err(Error::Config(format!(
            "synthetic datasets are balanced; n_graphs must be even and positive, got {n_graphs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(n_graphs);
    for i in 0..n_graphs {
        let positive = i % 2 == 0;
        graphs.push(random_triangle_graph(&mut rng, positive));
    }
    let mut pos_idx = Vec::new();
    let mut neg_idx = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        if g.label() == Some(true) {
            pos_idx.push(i);
        } else {
            neg_idx.push(i);
        }
    }
    let mut splits = Splits::default();
    for class in [pos_idx, neg_idx] {
        // 80/10/10 per class; tiny classes give up test, then valid.
        let n = class.len();
        let n_valid = if n >= 2 { (n / 10).max(1) } else { 0 };
        let n_test = if n >= 3 { (n / 10).max(1) } else { 0 };
        let n_train = n - n_valid - n_test;
        splits.train.extend(&class[..n_train]);
        splits.valid.extend(&class[n_train..n_train + n_valid]);
        splits.test.extend(&class[n_train + n_valid..]);
    }
    splits.train.sort_unstable();
    splits.valid.sort_unstable();
    splits.test.sort_unstable();
    Dataset::new(graphs, splits)
}

fn random_triangle_graph(rng: &mut ChaCha8Rng, positive: bool) -> Graph {
    let n = rng.gen_range(5..=10);
    // Random spanning tree; trees are triangle-free by construction.
    let mut adj = vec![vec![false; n]; n];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let push = |edges: &mut Vec<(usize, usize)>, adj: &mut Vec<Vec<bool>>, u: usize, v: usize| {
        if u != v && !adj[u][v] {
            adj[u][v] = true;
            adj[v][u] = true;
            edges.push((u.min(v), u.max(v)));
        }
    };
    for u in 1..n {
        let v = rng.gen_range(0..u);
        push(&mut edges, &mut adj, u, v);
    }
    if positive {
        // Close a triangle over a random tree edge, then sprinkle extras.
        let &(u, v) = &edges[rng.gen_range(0..edges.len())];
        let mut w = rng.gen_range(0..n);
        while w == u || w == v {
            w = rng.gen_range(0..n);
        }
        push(&mut edges, &mut adj, u, w);
        push(&mut edges, &mut adj, v, w);
        for _ in 0..rng.gen_range(0..3) {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            push(&mut edges, &mut adj, a, b);
        }
    } else {
        // Extra edges only where they close no triangle: the endpoints
        // must share no neighbor.
        for _ in 0..rng.gen_range(0..4) {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b || adj[a][b] {
                continue;
            }
            let shares = (0..n).any(|c| adj[a][c] && adj[b][c]);
            if !shares {
                push(&mut edges, &mut adj, a, b);
            }
        }
    }
    let node_feat = CodeMatrix::from_rows(&vec![vec![0]; n]);
    let edge_feat = CodeMatrix::from_rows(&vec![vec![0]; edges.len()]);
    let g = Graph::new(n, edges, node_feat, edge_feat, Some(positive))
        .expect("generator builds valid graphs");
    debug_assert_eq!(has_triangle(&g), positive);
    g
}

/// Whether the graph contains a 3-cycle: the trace of A^3 is positive.
pub fn has_triangle(g: &Graph) -> bool {
    let walks = g.walk_counts(3).expect("length 3 cannot overflow at n <= 10");
    walks.diagonal().iter().sum::<f64>() > 0.0
}
