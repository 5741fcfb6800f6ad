//! Run manifests: what went in, what came out, and how scoring went.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flab_core::llm::ScoringStats;

use crate::error::{CliError, OrValidation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSize {
    pub state: String,
    pub object: String,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringSummary {
    pub method: String,
    pub stats: ScoringStats,
    pub failed_pairs: Vec<String>,
    /// Empty for embedding baselines and canonical prompts.
    pub guidance_sizes: Vec<GuidanceSize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    /// SHA-256 per input file or directory.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring: Option<ScoringSummary>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: String, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            scoring: None,
            summary: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        let digest = hash_path(path).invalid(&format!("hashing {}", path.display()))?;
        self.inputs.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(path, body).io_context(&format!("writing {}", path.display()))
    }
}

fn hash_file(path: &Path) -> std::io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// A directory hashes its top-level files by name, in sorted order.
pub fn hash_path(path: &Path) -> std::io::Result<String> {
    if !path.is_dir() {
        return hash_file(path);
    }
    let mut names: Vec<_> = fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for name in names {
        h.update(name.to_string_lossy().as_bytes());
        h.update(b"\0");
        h.update(hash_file(&path.join(&name))?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}
