use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"PFCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Decoded checkpoint: free-form JSON metadata plus named f32 tensors in
/// file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl CheckpointFile {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Serializes to bytes: magic, u64 LE header length, JSON header, then the
/// little-endian f32 payload of every tensor in header order.
pub fn encode_checkpoint(meta: &serde_json::Value, tensors: &[(String, &Tensor<f32>)]) -> Result<Vec<u8>> {
    let header = Header {
        meta: meta.clone(),
        tensors: tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 4).sum();
    let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 8 + json.len() + payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointFile> {
    let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
    if bytes.len() < 13 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(bad("missing PFCK1 magic"));
    }
    let hlen = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let body = &bytes[13..];
    if hlen > body.len() {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    let mut data = &body[hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        if data.len() < n * 4 {
            return Err(bad(&format!("tensor {} needs {} bytes, {} remain", e.name, n * 4, data.len())));
        }
        let vals = data[..n * 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        data = &data[n * 4..];
        tensors.push((e.name, Tensor::from_vec(&e.shape, vals)?));
    }
    if !data.is_empty() {
        return Err(bad(&format!("{} trailing bytes", data.len())));
    }
    Ok(CheckpointFile { meta: header.meta, tensors })
}

/// Writes through a temporary file and renames, so readers never observe a
/// partial checkpoint.
pub fn save_checkpoint(path: impl AsRef<Path>, meta: &serde_json::Value, tensors: &[(String, &Tensor<f32>)]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(meta, tensors)?;
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
