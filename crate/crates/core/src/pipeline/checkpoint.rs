//! Single-file checkpoints: an 8-byte magic, a little-endian `u64` manifest
//! length, a JSON manifest, then all tensors as little-endian `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::model::AdaMatte;

pub const MAGIC: &[u8; 8] = b"ADAMATTE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Number of `f32` values.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorRecord>,
    pub blob_bytes: usize,
}

pub fn to_bytes(model: &AdaMatte) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: &str, kind, shape: &[usize], data: &[f32]| {
        tensors.push(TensorRecord {
            name: name.to_owned(),
            kind,
            shape: shape.to_vec(),
            offset: blob.len(),
            len: data.len(),
        });
        data.iter()
            .for_each(|v| blob.extend_from_slice(&v.to_le_bytes()));
    };
    for p in model.store.params() {
        push(
            &p.name,
            TensorKind::Param,
            p.tensor.shape(),
            p.tensor.data(),
        );
    }
    for (name, shape, data) in model.store.buffers() {
        push(&name, TensorKind::Buffer, &shape, &data);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        blob_bytes: blob.len(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn save(model: &AdaMatte, path: &Path) -> Result<()> {
    atomic_write(path, &to_bytes(model)?)
}

fn split(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not an adamatte checkpoint".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Checkpoint("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(json)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let blob = &bytes[16 + len..];
    if blob.len() < manifest.blob_bytes {
        return Err(Error::Checkpoint(format!(
            "truncated blob: {} of {} bytes",
            blob.len(),
            manifest.blob_bytes
        )));
    }
    Ok((manifest, blob))
}

fn values(rec: &TensorRecord, blob: &[u8]) -> Result<Vec<f32>> {
    let bytes = blob
        .get(rec.offset..rec.offset + 4 * rec.len)
        .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` lies outside the blob", rec.name)))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

/// Overwrites the parameters and buffers of `model` from checkpoint bytes.
/// Every model tensor must be present with the same shape.
pub fn load_into_bytes(model: &mut AdaMatte, bytes: &[u8]) -> Result<()> {
    let (manifest, blob) = split(bytes)?;
    let find = |name: &str, kind| {
        manifest
            .tensors
            .iter()
            .find(|r| r.name == name && r.kind == kind)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no tensor `{name}`")))
    };
    let check = |rec: &TensorRecord, expected: &[usize]| {
        if rec.shape != expected || rec.len != expected.iter().product::<usize>() {
            return Err(Error::ParamShape {
                name: rec.name.clone(),
                expected: expected.to_vec(),
                found: rec.shape.clone(),
            });
        }
        Ok(())
    };
    let mut params = Vec::new();
    for p in model.store.params() {
        let rec = find(&p.name, TensorKind::Param)?;
        check(rec, p.tensor.shape())?;
        params.push(values(rec, blob)?);
    }
    let mut buffers = Vec::new();
    for (name, shape, _) in model.store.buffers() {
        let rec = find(&name, TensorKind::Buffer)?;
        check(rec, &shape)?;
        buffers.push(values(rec, blob)?);
    }
    for (i, data) in params.into_iter().enumerate() {
        model.store.set_param_data(i, data)?;
    }
    for (i, data) in buffers.into_iter().enumerate() {
        model.store.set_buffer_data(i, data)?;
    }
    Ok(())
}

pub fn load_into(model: &mut AdaMatte, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_into_bytes(model, &bytes)
}

/// Builds a model from the configuration echoed in the checkpoint.
pub fn load(path: &Path) -> Result<AdaMatte> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (manifest, _) = split(&bytes)?;
    let mut model = AdaMatte::new(manifest.config, 0)?;
    load_into_bytes(&mut model, &bytes)?;
    Ok(model)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split(&bytes)?.0)
}
