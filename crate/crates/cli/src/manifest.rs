//! Run manifests: enough provenance to reproduce any command.
//!
//! Every subcommand writes a `manifest.json` next to its outputs recording
//! the command name, the fully resolved configuration, the seed, a SHA-256
//! digest of each input file (taken before any work starts), the output
//! paths, and start/end timestamps. Identical inputs plus the same seed
//! reproduce the outputs byte for byte; the manifest is what makes that
//! claim checkable after the fact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use distangle_core::trainer::atomic_write;
use distangle_core::{Error, Result};

/// Provenance record for one command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// The configuration the run actually used, after flag and environment
    /// overrides.
    pub config: serde_json::Value,
    pub seed: u64,
    /// Input path -> SHA-256 digest, hashed before the run did any work.
    pub inputs: BTreeMap<String, String>,
    /// Paths the run wrote (the manifest itself is excluded).
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Optional command-specific counters (for example label-tense drops).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<serde_json::Value>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_unix: now_unix(),
            finished_unix: 0,
            stats: None,
        }
    }

    /// Hash an input file now, before the command consumes it.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Stamp the end time and write `manifest.json` into `dir` atomically.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = now_unix();
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&self)?;
        atomic_write(&path, (body + "\n").as_bytes())?;
        Ok(path)
    }
}
