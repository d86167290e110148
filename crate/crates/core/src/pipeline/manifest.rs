//! Run manifests: what was run, on which inputs, producing which files.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub tool_version: String,
    pub command: String,
    pub benchmark: String,
    pub config_sha256: String,
    /// Copy of the configuration inside the run directory.
    pub config_file: String,
    /// Full-order integrator for snapshot and reference runs.
    pub integrator: serde_json::Value,
    /// Command arguments sufficient to repeat the run.
    pub arguments: serde_json::Value,
    /// Command-specific facts: basis sizes, DEIM indices, fit diagnostics.
    pub details: serde_json::Value,
    pub artifacts: Vec<Artifact>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn artifact(dir: &Path, rel: &str) -> Result<Artifact> {
    let path = dir.join(rel);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Artifact {
        path: rel.to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

impl RunManifest {
    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = Self::path_in(dir);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads `path`, or `path/manifest.json` when `path` is a directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { Self::path_in(path) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: file.clone(),
            reason: e.to_string(),
        })?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Format {
                path: file,
                reason: format!("unsupported manifest schema {}", m.schema),
            });
        }
        Ok(m)
    }

    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }

    /// Rehashes every artifact under `dir` and reports the first mismatch.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let now = artifact(dir, &a.path)?;
            if now.sha256 != a.sha256 {
                return Err(Error::Format {
                    path: dir.join(&a.path),
                    reason: "content differs from the manifest hash".into(),
                });
            }
        }
        Ok(())
    }
}
