//! One JSON record per CLI run: what ran, with which inputs, producing what.

use std::path::{Path, PathBuf};

use hspace_core::ids::sha256_hex;
use hspace_core::store::archive_paths;
use hspace_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: String,
    pub toolkit_version: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Hash a file, or both files of an archive when `path` names one.
pub fn hash_input(path: &Path) -> Result<Vec<InputHash>> {
    if path.is_file() {
        let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        return Ok(vec![InputHash {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        }]);
    }
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(hash_input(&f)?);
        }
        return Ok(out);
    }
    let (manifest, data) = archive_paths(path);
    if manifest.is_file() {
        let mut out = hash_input(&manifest)?;
        if data.is_file() {
            out.extend(hash_input(&data)?);
        }
        return Ok(out);
    }
    Err(Error::Input(format!("input {} does not exist", path.display())))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("run-{command}.json"))
}

impl RunManifest {
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
        let path = manifest_path(out, &self.command);
        let mut text = serde_json::to_vec_pretty(self)?;
        text.push(b'\n');
        std::fs::write(&path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: not a run manifest: {e}", path.display())))
    }
}
