//! Flat checkpoint directories.
//!
//! ```text
//! <dir>/manifest.json   {"format", "version", "tensors": [{name, shape, dtype}], "meta"}
//! <dir>/params.bin      little-endian f32 values, tensors concatenated in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT: &str = "jokerank-checkpoint";
pub const VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorEntry>,
    /// Model-specific payload (configuration, vocabularies, fingerprints).
    pub meta: serde_json::Value,
}

/// Writes every tensor of `store` (in store order) as 32-bit floats.
pub fn save(dir: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(store.len());
    let mut bytes = Vec::with_capacity(store.num_scalars() * 4);
    for (_, name, t) in store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
        });
        for v in t.data() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        tensors,
        meta,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
            manifest.format, manifest.version
        )));
    }
    Ok(manifest)
}

/// Loads a checkpoint, widening every value back to `f64`.
pub fn load(dir: &Path) -> Result<(ParamStore, Manifest)> {
    let manifest = read_manifest(dir)?;
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    let expected: usize = manifest
        .tensors
        .iter()
        .map(|e| e.shape.iter().product::<usize>() * 4)
        .sum();
    if bytes.len() != expected {
        return Err(TensorError::Checkpoint(format!(
            "{PARAMS_FILE} holds {} bytes, manifest describes {expected}",
            bytes.len()
        )));
    }
    let mut store = ParamStore::new();
    let mut offset = 0;
    for entry in &manifest.tensors {
        if entry.dtype != "f32" {
            return Err(TensorError::Checkpoint(format!(
                "tensor {} has unsupported dtype {}",
                entry.name, entry.dtype
            )));
        }
        let n: usize = entry.shape.iter().product();
        let data = bytes[offset..offset + n * 4]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        offset += n * 4;
        store.insert(&entry.name, Tensor::new(entry.shape.clone(), data)?);
    }
    Ok((store, manifest))
}
