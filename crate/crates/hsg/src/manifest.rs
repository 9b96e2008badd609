//! Per-run provenance record.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{self, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Name → SHA-256 of the canonical JSON of each effective config.
    pub config_hashes: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("config serializes").as_bytes())
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            manifest: RunManifest {
                command: command.into(),
                config_hashes: BTreeMap::new(),
                seed: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                version: env!("CARGO_PKG_VERSION").into(),
                wall_clock_seconds: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn config<T: Serialize>(&mut self, name: &str, value: &T) -> &mut Self {
        self.manifest.config_hashes.insert(name.into(), config_hash(value));
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.display().to_string());
        self
    }

    pub fn finish(&self) -> RunManifest {
        let mut m = self.manifest.clone();
        m.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        m
    }

    pub fn write(&self, path: &Path) -> Result<RunManifest> {
        let m = self.finish();
        error::write_json(path, &m)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
