//! Run manifests: resolved parameters plus SHA-256 digests of every input
//! and output file. No timestamps, so identical runs produce identical
//! manifests.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.display().to_string(),
            bytes: data.len() as u64,
            sha256: hex::encode(Sha256::digest(&data)),
        })
    }
}

#[derive(Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    parameters: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    /// Outputs that legitimately differ between runs (wall-clock timings).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    unpinned_outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, parameters: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            parameters,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            unpinned_outputs: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn unpinned(&mut self, path: &Path) {
        self.unpinned_outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
