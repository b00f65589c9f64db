//! Binary checkpoint format.
//!
//! ```text
//! "GMV1"                       4 bytes
//! header length                u64 little-endian
//! header                       UTF-8 JSON
//! tensor payloads              f32 little-endian, manifest order
//! ```
//!
//! The header holds the format version, the full model config, the training
//! seed, and a manifest of `{name, dtype, shape, offset}` entries with byte
//! offsets relative to the start of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::GraspMamba;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GMV1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub config: ModelConfig,
    pub train_seed: Option<u64>,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &GraspMamba) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(model.params.len());
    let mut payload = Vec::with_capacity(4 * model.params.num_scalars());
    for (name, t) in model.params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for &v in t.data() {
            let f = v as f32;
            if f as f64 != v {
                return Err(Error::Numeric(format!(
                    "parameter {name:?} holds {v}, which f32 cannot store exactly"
                )));
            }
            payload.extend_from_slice(&f.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        train_seed: model.train_seed,
        tensors,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses a checkpoint into its header and named tensors.
pub fn parse(bytes: &[u8]) -> Result<(Header, ParamStore)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let body = &bytes[12..];
    if hlen > body.len() {
        return Err(Error::Format("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let payload = &body[hlen..];
    let mut params = ParamStore::new();
    let mut expected_offset = 0usize;
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(Error::Format(format!("tensor {:?}: unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        if start != expected_offset {
            return Err(Error::Format(format!("tensor {:?}: offset {start} out of order", e.name)));
        }
        let end = start + 4 * n;
        if end > payload.len() {
            return Err(Error::Format(format!("truncated checkpoint in tensor {:?}", e.name)));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            payload.len() - expected_offset
        )));
    }
    Ok((header, params))
}

pub fn from_bytes(bytes: &[u8]) -> Result<GraspMamba> {
    let (header, params) = parse(bytes)?;
    let mut model = GraspMamba::from_params(header.config, params)?;
    model.train_seed = header.train_seed;
    Ok(model)
}

/// Loads parameters into a model built from `config`, failing with the first
/// tensor whose shape disagrees.
pub fn from_bytes_with_config(bytes: &[u8], config: &ModelConfig) -> Result<GraspMamba> {
    let (header, params) = parse(bytes)?;
    let mut model = GraspMamba::from_params(config.clone(), params)?;
    model.train_seed = header.train_seed;
    Ok(model)
}

pub fn save_checkpoint(model: &GraspMamba, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<GraspMamba> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
