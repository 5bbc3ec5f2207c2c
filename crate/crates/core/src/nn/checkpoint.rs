//! `MOFITCKPT1` checkpoint files.
//!
//! Layout: the 10 magic bytes, a little-endian `u64` header length, the UTF-8
//! JSON header, then every parameter tensor as little-endian `f64` in manifest
//! order. Manifest offsets are byte offsets from the start of the blob region.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Architecture, DenoiserModel, Layer};
use crate::error::{Error, Result};

pub const CKPT_MAGIC: &[u8; 10] = b"MOFITCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Free-form provenance carried in the header.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub build: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: CheckpointMeta,
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &DenoiserModel, meta: &CheckpointMeta) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (i, l) in model.layers().iter().enumerate() {
        let (o, n) = l.weight.dim();
        tensors.push(TensorEntry {
            name: format!("layer{i}.weight"),
            shape: vec![o, n],
            offset,
        });
        offset += (o * n * 8) as u64;
        tensors.push(TensorEntry {
            name: format!("layer{i}.bias"),
            shape: vec![o],
            offset,
        });
        offset += (o * 8) as u64;
    }
    let header = Header {
        arch: model.arch().clone(),
        tensors,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for l in model.layers() {
        for v in l.weight.iter().chain(l.bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(DenoiserModel, CheckpointMeta)> {
    let mut magic = [0u8; 10];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Format("not a MOFITCKPT1 checkpoint".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 64 << 20 {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;

    let dims = header.arch.layer_dims();
    if header.tensors.len() != dims.len() * 2 {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, architecture needs {}",
            header.tensors.len(),
            dims.len() * 2
        )));
    }
    let take = |entry: &TensorEntry, expect: &[usize]| -> Result<Vec<f64>> {
        if entry.shape != expect {
            return Err(Error::Format(format!(
                "tensor {} has shape {:?}, expected {:?}",
                entry.name, entry.shape, expect
            )));
        }
        let count: usize = expect.iter().product();
        let start = entry.offset as usize;
        let end = start + count * 8;
        if end > blob.len() {
            return Err(Error::Format(format!("tensor {} runs past end of file", entry.name)));
        }
        Ok(blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let mut layers = Vec::with_capacity(dims.len());
    for (i, &(o, n)) in dims.iter().enumerate() {
        let w = take(&header.tensors[2 * i], &[o, n])?;
        let b = take(&header.tensors[2 * i + 1], &[o])?;
        layers.push(Layer {
            weight: Array2::from_shape_vec((o, n), w).map_err(|e| Error::Format(e.to_string()))?,
            bias: Array1::from(b),
        });
    }
    let model = DenoiserModel::from_layers(header.arch, layers)?;
    Ok((model, header.meta))
}
