//! Run manifests: a config snapshot, content hashes of every artifact the
//! run produced, the resulting metrics, and timestamps.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use segodm::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub config: RunConfig,
    /// artifact name -> sha256 hex of its content
    pub artifacts: BTreeMap<String, String>,
    /// metric name -> value
    pub metrics: BTreeMap<String, f64>,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Hash one file's bytes.
pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex_digest(&bytes))
}

/// Hash a directory: the concatenation of (name, content) of every regular
/// file, in sorted name order.
pub fn hash_dir(path: &Path) -> Result<String> {
    let mut names: Vec<String> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut hasher = Sha256::new();
    for name in names {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(std::fs::read(path.join(name))?);
    }
    Ok(hex_encode(&hasher.finalize()))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_encode(&hasher.finalize())
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    /// Record an artifact (file or directory) relative to `root`.
    pub fn add_artifact(&mut self, root: &Path, name: &str) -> Result<()> {
        let path = root.join(name);
        let digest = if path.is_dir() {
            hash_dir(&path)?
        } else {
            hash_file(&path)?
        };
        self.artifacts.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let content = std::fs::read_to_string(path)?;
        toml::from_str(&content).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Check that every referenced artifact exists and hash-matches.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for (name, expected) in &self.artifacts {
            let path = root.join(name);
            if !path.exists() {
                return Err(Error::Data(format!("artifact `{name}` is missing")));
            }
            let digest = if path.is_dir() {
                hash_dir(&path)?
            } else {
                hash_file(&path)?
            };
            if &digest != expected {
                return Err(Error::Data(format!(
                    "artifact `{name}` hash mismatch: expected {expected}, got {digest}"
                )));
            }
        }
        Ok(())
    }

    /// `key value` lines for plotting.
    pub fn metric_lines(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k} {v}\n"));
        }
        out
    }
}
