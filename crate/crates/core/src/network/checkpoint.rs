//! Checkpoint serialisation.
//!
//! Layout: the magic line `CHORUSNET-CKPT`, one line of JSON header (format
//! version, variant, full config, training step, optional prior, ordered
//! tensor manifest), then every tensor as little-endian f32 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Variant};
use super::params::{manifest, ModelParams, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8] = b"CHORUSNET-CKPT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    variant: Variant,
    config: ModelConfig,
    training_step: u64,
    theta: Option<f64>,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    params.validate()?;
    let header = Header {
        format_version: FORMAT_VERSION,
        variant: params.config.variant,
        config: params.config.clone(),
        training_step: params.training_step,
        theta: params.theta,
        tensors: params
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + 4 * params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for t in &params.tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Checkpoint("missing CHORUSNET-CKPT header".into()))?;
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("unterminated header".into()))?;
    let header: Header = serde_json::from_slice(&rest[..newline])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    if header.variant != header.config.variant {
        return Err(Error::Checkpoint("variant disagrees with config".into()));
    }
    header.config.validate()?;
    let expected = manifest(&header.config);
    if expected.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut payload = &rest[newline + 1..];
    let mut tensors = Vec::with_capacity(expected.len());
    for ((name, shape, trainable), entry) in expected.into_iter().zip(header.tensors) {
        if entry.name != name || entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let n: usize = shape.iter().product();
        if payload.len() < 4 * n {
            return Err(Error::Checkpoint(format!(
                "truncated data for tensor {name}"
            )));
        }
        let (raw, tail) = payload.split_at(4 * n);
        payload = tail;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor {
            name,
            shape,
            data,
            trainable,
        });
    }
    if !payload.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            payload.len()
        )));
    }
    Ok(ModelParams {
        config: header.config,
        tensors,
        training_step: header.training_step,
        theta: header.theta,
    })
}

/// Loads a checkpoint and rejects it unless it holds the requested variant.
pub fn load_checkpoint_variant(bytes: &[u8], variant: Variant) -> Result<ModelParams<f32>> {
    let params = load_checkpoint(bytes)?;
    if params.config.variant != variant {
        return Err(Error::Variant(format!(
            "checkpoint holds a {} model, expected {variant}",
            params.config.variant
        )));
    }
    Ok(params)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&bytes)
}
