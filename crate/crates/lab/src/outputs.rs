//! Output directories: resolved config plus a manifest of artifact hashes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::csvio::write_bytes;
use crate::error::{LabError, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    artifact: Vec<Artifact>,
}

/// Collects the files a command writes under one directory.
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| LabError::io(root, e))?;
        Ok(OutputDir { root: root.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path of `name`, registered as an artifact.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let rel = PathBuf::from(name);
        if !self.artifacts.contains(&rel) {
            self.artifacts.push(rel);
        }
        self.root.join(name)
    }

    /// Writes `config.toml` and `manifest.toml` hashing every artifact.
    pub fn finish(mut self, command: &str, config: &RunConfig) -> Result<PathBuf> {
        let config_path = self.file(CONFIG_FILE);
        write_bytes(&config_path, config.to_toml().as_bytes())?;
        let mut rels = self.artifacts.clone();
        rels.sort();
        let artifact = rels
            .iter()
            .map(|rel| {
                let path = self.root.join(rel);
                let bytes = std::fs::read(&path).map_err(|e| LabError::io(&path, e))?;
                Ok(Artifact {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    bytes: bytes.len() as u64,
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest { command, tool_version: env!("CARGO_PKG_VERSION"), artifact };
        let path = self.root.join(MANIFEST_FILE);
        write_bytes(&path, toml::to_string(&manifest).expect("manifest serializes").as_bytes())?;
        Ok(path)
    }
}
