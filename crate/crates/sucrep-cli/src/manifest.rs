//! Run manifests: every command writes one next to its artifacts, recording
//! the exact inputs needed to reproduce them byte for byte.

use crate::error::CliError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// flat snapshot of every input that affects the outputs
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    /// sha-256 of the input dataset bytes, when a dataset is involved
    pub dataset_sha256: Option<String>,
    /// paths of produced files, relative to the manifest's directory
    pub artifacts: Vec<String>,
    /// wall-clock creation time (informational, not reproduced)
    pub created_unix_ms: u128,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: BTreeMap::new(),
            seed,
            dataset_sha256: None,
            artifacts: Vec::new(),
            created_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn artifact(mut self, path: &str) -> Self {
        self.artifacts.push(path.to_string());
        self
    }

    pub fn with_dataset_hash(mut self, hash: String) -> Self {
        self.dataset_sha256 = Some(hash);
        self
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).map_err(CliError::io)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    #[cfg(test)]
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Artifact(format!("bad manifest: {e}")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = RunManifest::new("gen", 7)
            .with("span_limit", 4)
            .artifact("dataset.jsonl");
        m.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back.command, "gen");
        assert_eq!(back.seed, 7);
        assert_eq!(back.artifacts, vec!["dataset.jsonl"]);
    }
}
