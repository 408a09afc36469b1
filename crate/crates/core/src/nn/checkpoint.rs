//! Binary checkpoints: magic, length-prefixed JSON header, raw f64 data.
//!
//! Layout: `SLCKPT01`, header length as u64 little endian, UTF-8 JSON
//! header, then every tensor listed in the header as little-endian f64
//! values in header order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::model::{stage_max_words, Model, ModelSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SLCKPT01";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: ModelSpec,
    stage: usize,
    max_words: usize,
    seed: u64,
    frozen: Vec<String>,
    optimizer: OptimizerHeader,
    tensors: Vec<TensorEntry>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

pub fn encode_checkpoint(model: &Model, adam: &Adam) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (name, t) in model.params().into_iter().chain(model.buffers()) {
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
        });
        data.extend_from_slice(t.data());
    }
    for (name, (m, v)) in &adam.moments {
        for (prefix, values) in [("adam.m", m), ("adam.v", v)] {
            entries.push(TensorEntry {
                name: format!("{prefix}.{name}"),
                shape: vec![values.len()],
            });
            data.extend_from_slice(values);
        }
    }
    let header = Header {
        version: VERSION,
        spec: model.spec().clone(),
        stage: model.stage(),
        max_words: model.max_words(),
        seed: model.seed(),
        frozen: model.frozen().iter().cloned().collect(),
        optimizer: OptimizerHeader {
            config: adam.config,
            step: adam.step,
        },
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, Adam)> {
    if bytes.len() < MAGIC.len() {
        return if MAGIC.starts_with(bytes) && !bytes.is_empty() {
            Err(Error::CheckpointTruncated("inside magic bytes".into()))
        } else {
            Err(Error::NotACheckpoint)
        };
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let len_bytes = bytes
        .get(8..16)
        .ok_or_else(|| Error::CheckpointTruncated("missing header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::CheckpointTruncated(format!("header of {header_len} bytes cut short")))?;
    let header_bytes = &bytes[16..header_end];
    let probe: VersionProbe = serde_json::from_slice(header_bytes)?;
    if probe.version != VERSION {
        return Err(Error::CheckpointVersion {
            found: probe.version,
            expected: VERSION,
        });
    }
    let header: Header = serde_json::from_slice(header_bytes)?;
    let mut model = Model::new(header.spec, header.seed)?;
    model.set_stage(header.stage);
    if header.max_words != stage_max_words(header.stage) {
        return Err(Error::Data(format!(
            "checkpoint max_words {} inconsistent with stage {}",
            header.max_words, header.stage
        )));
    }
    let frozen: Vec<&str> = header.frozen.iter().map(String::as_str).collect();
    model.freeze(&frozen)?;

    let payload = &bytes[header_end..];
    let needed: usize = header
        .tensors
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if payload.len() < needed * 8 {
        return Err(Error::CheckpointTruncated(format!(
            "expected {} data bytes, found {}",
            needed * 8,
            payload.len()
        )));
    }
    if payload.len() > needed * 8 {
        return Err(Error::Data(format!(
            "{} trailing bytes after checkpoint data",
            payload.len() - needed * 8
        )));
    }
    let mut values: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    let mut offset = 0;
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let vals = payload[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset += n * 8;
        values.insert(e.name, (e.shape, vals));
    }

    let mut fill = |name: String, t: &mut super::Tensor| -> Result<()> {
        let (shape, vals) = values.remove(&name).ok_or_else(|| Error::CheckpointShape {
            name: name.clone(),
            detail: "missing from checkpoint".into(),
        })?;
        if shape != t.shape() {
            return Err(Error::CheckpointShape {
                name,
                detail: format!("stored {shape:?}, model expects {:?}", t.shape()),
            });
        }
        t.data_mut().copy_from_slice(&vals);
        Ok(())
    };
    for (name, _, t) in model.params_mut() {
        fill(name, t)?;
    }
    for (name, t) in model.buffers_mut() {
        fill(name, t)?;
    }

    let mut adam = Adam::new(header.optimizer.config);
    adam.step = header.optimizer.step;
    let shapes: BTreeMap<String, usize> = model.params().into_iter().map(|(n, t)| (n, t.len())).collect();
    let moment_names: Vec<String> = values
        .keys()
        .filter_map(|k| k.strip_prefix("adam.m.").map(str::to_string))
        .collect();
    for name in moment_names {
        let (_, m) = values.remove(&format!("adam.m.{name}")).expect("listed key");
        let (_, v) = values.remove(&format!("adam.v.{name}")).ok_or_else(|| Error::CheckpointShape {
            name: format!("adam.v.{name}"),
            detail: "second moment missing".into(),
        })?;
        if shapes.get(&name) != Some(&m.len()) || m.len() != v.len() {
            return Err(Error::CheckpointShape {
                name: format!("adam.m.{name}"),
                detail: "moment length does not match parameter".into(),
            });
        }
        adam.moments.insert(name, (m, v));
    }
    if let Some(extra) = values.keys().next() {
        return Err(Error::CheckpointShape {
            name: extra.clone(),
            detail: "not a parameter of this model".into(),
        });
    }
    Ok((model, adam))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn save_checkpoint(path: &Path, model: &Model, adam: &Adam) -> Result<()> {
    let bytes = encode_checkpoint(model, adam)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Adam)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
