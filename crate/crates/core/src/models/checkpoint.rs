//! Binary checkpoint format.
//!
//! ```text
//! "MVKD1\n"              6-byte magic
//! header length          u64, little endian
//! header                 UTF-8 JSON (config, tensor directory, metadata)
//! payload                f32 little endian, tensors back to back
//! ```
//!
//! Directory offsets are relative to the start of the payload.

use std::path::Path;

use mvkd_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, ModelKind};
use super::network::Model;
use crate::error::{io_err, Error, Result};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 6] = b"MVKD1\n";
pub const FORMAT_VERSION: u32 = 1;

/// One epoch of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

/// Training metadata stored alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Epoch the stored parameters come from (0 = untrained).
    pub epoch: usize,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub size: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub meta: CheckpointMeta,
    pub payload_bytes: u64,
}

impl CheckpointHeader {
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum()
    }
}

/// Serialise a model and its metadata.
pub fn checkpoint_bytes(model: &Model<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(model.params().len());
    let mut offset = 0u64;
    for (name, t) in model.params().iter() {
        let size = 4 * t.numel() as u64;
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset,
            size,
        });
        offset += size;
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        tensors,
        meta: meta.clone(),
        payload_bytes: offset,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params().tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model<f32>, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(model, meta)?).map_err(io_err(path))
}

/// Split a buffer into validated header and payload.
fn split(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::FormatError("missing MVKD1 magic".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 8 {
        return Err(Error::CorruptCheckpoint("truncated header length".into()));
    }
    let header_len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes"));
    let rest = &rest[8..];
    if header_len > rest.len() as u64 {
        return Err(Error::CorruptCheckpoint(format!(
            "header of {header_len} bytes exceeds the {} remaining",
            rest.len()
        )));
    }
    let (json, payload) = rest.split_at(header_len as usize);
    let value: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| Error::FormatError(format!("header is not valid JSON: {e}")))?;
    let kind = value
        .pointer("/config/kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| Error::FormatError("header has no config.kind".into()))?;
    ModelKind::parse(kind)?;
    let header: CheckpointHeader =
        serde_json::from_value(value).map_err(|e| Error::FormatError(format!("malformed header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::FormatError(format!("unsupported format version {}", header.format_version)));
    }
    if header.payload_bytes != payload.len() as u64 {
        return Err(Error::CorruptCheckpoint(format!(
            "payload is {} bytes, header declares {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    let mut expected = 0u64;
    for e in &header.tensors {
        let numel: u64 = e.shape.iter().map(|&d| d as u64).product();
        if e.dtype != "f32" || e.size != 4 * numel {
            return Err(Error::CorruptCheckpoint(format!("entry {} has inconsistent dtype or size", e.name)));
        }
        if e.offset != expected || e.offset + e.size > header.payload_bytes {
            return Err(Error::CorruptCheckpoint(format!(
                "entry {} at [{}, {}) is out of order or outside the payload",
                e.name,
                e.offset,
                e.offset + e.size
            )));
        }
        expected += e.size;
    }
    if expected != header.payload_bytes {
        return Err(Error::CorruptCheckpoint("directory does not cover the payload".into()));
    }
    Ok((header, payload))
}

/// Parse a checkpoint from memory.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Model<f32>, CheckpointMeta)> {
    let (header, payload) = split(bytes)?;
    let mut params = ParamStore::new();
    for e in &header.tensors {
        let raw = &payload[e.offset as usize..(e.offset + e.size) as usize];
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.insert(&e.name, Tensor::from_vec(data, &e.shape)?)?;
    }
    let model = Model::from_params(&header.config, params)
        .map_err(|e| Error::CorruptCheckpoint(format!("parameters do not match the config: {e}")))?;
    Ok((model, header.meta))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, CheckpointMeta)> {
    let path = path.as_ref();
    checkpoint_from_bytes(&std::fs::read(path).map_err(io_err(path))?)
}

/// Validated header and total file size.
pub fn read_checkpoint_header(path: impl AsRef<Path>) -> Result<(CheckpointHeader, u64)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let (header, _) = split(&bytes)?;
    Ok((header, bytes.len() as u64))
}

impl Model<f32> {
    /// Size of this model serialised with empty training metadata.
    pub fn model_size_bytes(&self) -> Result<usize> {
        Ok(checkpoint_bytes(self, &CheckpointMeta::default())?.len())
    }
}
