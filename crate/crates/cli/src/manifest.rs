//! The run manifest written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command-specific flags such as the model name.
    pub arguments: BTreeMap<String, String>,
    pub config_hash: String,
    pub seed: u64,
    /// SHA-256 of each input file; directories hash their sorted files.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output file, keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        let versions = BTreeMap::from([
            ("jokerank".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("manifest".to_string(), "1".to_string()),
        ]);
        Self {
            command: command.into(),
            arguments: BTreeMap::new(),
            config_hash,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            versions,
        }
    }

    pub fn argument(&mut self, key: &str, value: impl Into<String>) {
        self.arguments.insert(key.into(), value.into());
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), hash_path(path)?);
        Ok(())
    }

    /// Records every file under `out` except the manifest itself, then writes the manifest.
    pub fn write(mut self, out: &Path) -> Result<(), CliError> {
        for file in files_under(out)? {
            let rel = file.strip_prefix(out).unwrap_or(&file);
            if rel == Path::new(MANIFEST_FILE) {
                continue;
            }
            self.outputs.insert(rel.display().to_string(), hash_path(&file)?);
        }
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        let path = out.join(MANIFEST_FILE);
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
    }
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let read = |d: &Path| std::fs::read_dir(d).map_err(|e| CliError::io(format!("cannot list {}: {e}", d.display())));
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in read(&d)? {
            let path = entry.map_err(|e| CliError::io(e.to_string()))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// SHA-256 of a file, or of a directory's relative file names and contents.
pub fn hash_path(path: &Path) -> Result<String, CliError> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| CliError::io(format!("cannot read {}: {e}", p.display())));
    if path.is_dir() {
        let mut h = Sha256::new();
        for file in files_under(path)? {
            let rel = file.strip_prefix(path).unwrap_or(&file);
            h.update(rel.display().to_string().as_bytes());
            h.update([0]);
            h.update(Sha256::digest(read(&file)?));
        }
        Ok(hex::encode(h.finalize()))
    } else {
        Ok(hex::encode(Sha256::digest(read(path)?)))
    }
}
