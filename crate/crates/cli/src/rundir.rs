//! Run directory locking and the run manifest.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

const LOCK_FILE: &str = ".wellplan.lock";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Exclusive hold on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        fs::create_dir_all(run_dir).map_err(|e| CliError::io(run_dir, e))?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(run_dir.to_path_buf())),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub seconds: f64,
    /// Output file (relative to the run directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    /// Input file path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load_or_new(run_dir: &Path, config_hash: &str) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut manifest = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| CliError::artifact(&path, e))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => RunManifest::default(),
            Err(e) => return Err(CliError::io(&path, e)),
        };
        if manifest.config_hash != config_hash {
            // a new configuration invalidates the records of earlier stages
            manifest.stages.clear();
            manifest.inputs.clear();
        }
        manifest.tool = "wellplan".into();
        manifest.version = env!("CARGO_PKG_VERSION").into();
        manifest.config_hash = config_hash.into();
        Ok(manifest)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    /// Warnings of every recorded stage, in stage-name order.
    pub fn warnings(&self) -> Vec<String> {
        self.stages.iter().flat_map(|(name, s)| s.warnings.iter().map(move |w| format!("{name}: {w}"))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(CliError::Locked(_))));
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_resets_on_new_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::load_or_new(dir.path(), "h1").unwrap();
        m.stages.insert("fit".into(), StageRecord::default());
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::load_or_new(dir.path(), "h1").unwrap().stages.len(), 1);
        assert!(RunManifest::load_or_new(dir.path(), "h2").unwrap().stages.is_empty());
    }
}
