//! Model container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes   | content                                  |
//! |---------|------------------------------------------|
//! | 4       | magic `FDMK`                             |
//! | 4       | format version (`u32`)                   |
//! | 8       | manifest length `m` (`u64`)              |
//! | m       | UTF-8 JSON manifest                      |
//! | rest    | `f32` values of every tensor, in order   |
//!
//! The manifest lists the architecture, each tensor's name, shape and
//! element offset into the blob, and free-form metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, Model};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"FDMK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn encode_model(model: &Model<f32>, metadata: serde_json::Value) -> Result<Vec<u8>> {
    model.validate()?;
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    for t in model.tensors_with_buffers() {
        tensors.push(TensorEntry {
            name: t.name,
            shape: t.shape,
            offset,
        });
        offset += t.data.len();
        blob.extend(t.data.iter().flat_map(|v| v.to_le_bytes()));
    }
    let manifest = ModelManifest {
        architecture: Architecture {
            input_channels: model.input_channels,
            layers: model.defs(),
        },
        tensors,
        metadata,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_model(bytes: &[u8], origin: &Path) -> Result<(Model<f32>, ModelManifest)> {
    let bad = |reason: String| Error::Malformed {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a model file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: ModelManifest = serde_json::from_slice(json)?;
    let blob = &bytes[16 + len..];
    if blob.len() % 4 != 0 {
        return Err(bad("weight blob is not a whole number of f32 values".into()));
    }
    let values: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();

    let arch = &manifest.architecture;
    let mut model = Model::<f32>::zeros(arch.input_channels, &arch.layers)
        .map_err(|e| bad(format!("invalid architecture: {e}")))?;
    let expected: Vec<(String, Vec<usize>)> = model
        .tensors_with_buffers()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(bad(format!(
            "expected {} tensors, manifest lists {}",
            expected.len(),
            manifest.tensors.len()
        )));
    }
    let mut consumed = 0;
    for ((dst, (name, shape)), entry) in model
        .tensors_mut(true)
        .into_iter()
        .zip(&expected)
        .zip(&manifest.tensors)
    {
        if &entry.name != name || &entry.shape != shape {
            return Err(bad(format!(
                "tensor {} {:?} does not match architecture ({name} {shape:?})",
                entry.name, entry.shape
            )));
        }
        let src = values
            .get(entry.offset..entry.offset + dst.len())
            .ok_or_else(|| bad(format!("tensor {name} runs past the blob")))?;
        dst.copy_from_slice(src);
        consumed += dst.len();
    }
    if consumed != values.len() {
        return Err(bad(format!(
            "blob holds {} values, tensors use {consumed}",
            values.len()
        )));
    }
    Ok((model, manifest))
}

pub fn save_model(path: impl AsRef<Path>, model: &Model<f32>, metadata: serde_json::Value) -> Result<()> {
    write_atomic(path, &encode_model(model, metadata)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Model<f32>, ModelManifest)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}
