//! Binary model checkpoints.
//!
//! Layout: the magic `PANW`, a format version, a JSON header (config and
//! feature cardinalities), then named little-endian f64 blocks covering
//! every parameter and the batch-norm running statistics. Values round
//! trip bit-exactly.

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PANW";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    node_cardinalities: Vec<usize>,
    edge_cardinalities: Vec<usize>,
}

fn write_block(w: &mut impl Write, name: &str, values: &[f64]) -> Result<()> {
    w.write_all(&(name.len() as u64).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes the model to `path`, replacing any existing file.
pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut blocks: Vec<(String, Vec<f64>)> = Vec::new();
    model.for_each_param(|name, m| blocks.push((name, m.data().to_vec())));
    blocks.extend(model.state_blocks());

    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        node_cardinalities: model.node_cardinalities().to_vec(),
        edge_cardinalities: model.edge_cardinalities().to_vec(),
    })?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(blocks.len() as u64).to_le_bytes())?;
    for (name, values) in &blocks {
        write_block(&mut w, name, values)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint(format!("truncated file while reading {what}")))?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let buf = read_exact(r, 8, what)?;
    Ok(u64::from_le_bytes(buf.try_into().unwrap()))
}

/// Reads a checkpoint written by [`save`]. The returned model is
/// bit-identical to the one saved.
pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact(&mut r, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:02x?}, not a model checkpoint"
        )));
    }
    let version = u32::from_le_bytes(read_exact(&mut r, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, this build reads {VERSION}"
        )));
    }
    let header_len = read_u64(&mut r, "header length")? as usize;
    let header: Header = serde_json::from_slice(&read_exact(&mut r, header_len, "header")?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let n_blocks = read_u64(&mut r, "block count")? as usize;
    let mut blocks: HashMap<String, Vec<f64>> = HashMap::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = read_u64(&mut r, "block name length")? as usize;
        let name = String::from_utf8(read_exact(&mut r, name_len, "block name")?)
            .map_err(|_| Error::Checkpoint("block name is not utf-8".into()))?;
        let count = read_u64(&mut r, "block value count")? as usize;
        let raw = read_exact(&mut r, count * 8, &format!("block {name}"))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if blocks.insert(name.clone(), values).is_some() {
            return Err(Error::Checkpoint(format!("duplicate block {name}")));
        }
    }

    // The seed only shapes the initial draw, which every block overwrites.
    let mut rng = ChaCha8Rng::seed_from_u64(header.config.seed);
    let mut model = Model::init(
        header.config,
        &header.node_cardinalities,
        &header.edge_cardinalities,
        &mut rng,
    )?;
    let mut names = Vec::new();
    model.for_each_param(|name, _| names.push(name));
    let mut i = 0usize;
    let mut failure: Option<Error> = None;
    model.for_each_param_mut(|m| {
        let name = &names[i];
        i += 1;
        if failure.is_some() {
            return;
        }
        match blocks.remove(name) {
            Some(values) if values.len() == m.data().len() => {
                m.data_mut().copy_from_slice(&values);
            }
            Some(values) => {
                failure = Some(Error::Checkpoint(format!(
                    "block {name} holds {} values, the model needs {}",
                    values.len(),
                    m.data().len()
                )));
            }
            None => {
                failure = Some(Error::Checkpoint(format!("missing block {name}")));
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let state_names: Vec<String> = model.state_blocks().into_iter().map(|(n, _)| n).collect();
    for name in state_names {
        let values = blocks
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))?;
        model.set_state_block(&name, &values)?;
    }
    if let Some(name) = blocks.keys().next() {
        return Err(Error::Checkpoint(format!(
            "block {name} does not belong to this architecture"
        )));
    }
    Ok(model)
}
