//! Provenance record written next to every command's outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the compact JSON serialization of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub tool_version: String,
    pub wall_clock_s: f64,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects artifacts while a command runs and writes the manifest last.
pub struct ManifestBuilder {
    out_dir: PathBuf,
    command: &'static str,
    config: serde_json::Value,
    seed: u64,
    artifacts: Vec<String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(out_dir: &Path, command: &'static str, config: serde_json::Value, seed: u64) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        Ok(ManifestBuilder {
            out_dir: out_dir.to_path_buf(),
            command,
            config,
            seed,
            artifacts: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Writes `bytes` to `rel` under the output directory and records it.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(rel.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.write(rel, &bytes)
    }

    pub fn finish(self) -> Result<RunManifest, CliError> {
        let m = RunManifest {
            command: self.command.to_string(),
            config_hash: config_hash(&self.config),
            config: self.config,
            seed: self.seed,
            artifacts: self.artifacts,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        let bytes = serde_json::to_vec_pretty(&m).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_key_sensitive() {
        let a = serde_json::json!({"epochs": 3, "seed": 1});
        let b = serde_json::json!({"epochs": 3, "seed": 2});
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
