//! Versioned binary checkpoints: magic "CNPN", format version, a
//! length-prefixed JSON header (config + step + seed + parameter layout),
//! then raw little-endian f32 data per parameter in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"CNPN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    step: u64,
    seed: u64,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(params: &EncoderParams<f32>, step: u64, seed: u64) -> Result<Vec<u8>> {
    let schema = params.config.parameter_schema();
    let header = Header {
        config: params.config.clone(),
        step,
        seed,
        params: schema
            .into_iter()
            .map(|(name, shape)| ParamEntry { name, shape })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let data_len: usize = params.tensors().iter().map(|t| t.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + header_json.len() + data_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for tensor in params.tensors() {
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(EncoderParams<f32>, u64, u64)> {
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("file too short for a header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint(
            "bad magic: not a CNPN checkpoint file".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
    header.config.validate()?;

    let schema = header.config.parameter_schema();
    if schema.len() != header.params.len() {
        return Err(Error::Checkpoint(format!(
            "header declares {} parameters, config requires {}",
            header.params.len(),
            schema.len()
        )));
    }
    for ((name, shape), entry) in schema.iter().zip(&header.params) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "parameter {} has declared shape {:?}, config requires {name} with {shape:?}",
                entry.name, entry.shape
            )));
        }
    }

    let mut offset = 12 + header_len;
    let mut tensors = Vec::with_capacity(schema.len());
    for (name, shape) in &schema {
        let count: usize = shape.iter().product();
        let need = count * 4;
        if bytes.len() < offset + need {
            return Err(Error::Checkpoint(format!(
                "truncated data while reading parameter {name}"
            )));
        }
        let data: Vec<f32> = bytes[offset..offset + need]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::new(shape.clone(), data).expect("schema shape"));
        offset += need;
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the declared parameters",
            bytes.len() - offset
        )));
    }
    let params = EncoderParams::from_tensors(header.config, tensors)?;
    Ok((params, header.step, header.seed))
}

pub fn save(params: &EncoderParams<f32>, step: u64, seed: u64, path: &Path) -> Result<()> {
    let bytes = to_bytes(params, step, seed)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(EncoderParams<f32>, u64, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
