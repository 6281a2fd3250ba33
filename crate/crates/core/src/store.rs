//! On-disk archive of h-vectors.
//!
//! An archive named `<name>` is two files: `<name>.manifest.json`, a UTF-8
//! JSON manifest (`schema_version: 1`), and `<name>.hvec`, the raw
//! little-endian float32 payloads with no header. Each index entry points at
//! its payload with a byte `offset` and byte `length`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, HVector, Shape};
use crate::error::{Error, Result};
use crate::sampling::{PromptRecord, ResumeToken};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SUFFIX: &str = ".manifest.json";
pub const DATA_SUFFIX: &str = ".hvec";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub prompt_id: String,
    pub seed: u64,
    pub capture_step: u32,
    pub offset: u64,
    pub length: u64,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config: BackendConfig,
    pub config_hash: String,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<ResumeToken>,
    pub prompts: Vec<PromptRecord>,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArchiveSummary {
    pub manifest_path: PathBuf,
    pub data_path: PathBuf,
    pub entries: usize,
    pub prompts: usize,
    pub seeds: usize,
    pub total_bytes: u64,
}

/// Manifest and data paths for an archive base path. A trailing
/// `.manifest.json` or `.hvec` on `base` is ignored.
pub fn archive_paths(base: &Path) -> (PathBuf, PathBuf) {
    let text = base.to_string_lossy();
    let stem = text
        .strip_suffix(MANIFEST_SUFFIX)
        .or_else(|| text.strip_suffix(DATA_SUFFIX))
        .unwrap_or(&text)
        .to_string();
    (
        PathBuf::from(format!("{stem}{MANIFEST_SUFFIX}")),
        PathBuf::from(format!("{stem}{DATA_SUFFIX}")),
    )
}

type Key = (String, u64, u32);

/// An immutable set of h-vectors with their prompt records and config.
#[derive(Debug, Clone)]
pub struct VectorArchive {
    config: BackendConfig,
    config_hash: String,
    prompts: Vec<PromptRecord>,
    vectors: Vec<HVector>,
    index: HashMap<Key, usize>,
    complete: bool,
    resume: Option<ResumeToken>,
}

impl VectorArchive {
    /// Assemble an archive in memory, enforcing every manifest invariant.
    pub fn from_parts(
        config: BackendConfig,
        prompts: Vec<PromptRecord>,
        vectors: Vec<HVector>,
    ) -> Result<Self> {
        let config_hash = config.hash();
        let mut ids = BTreeSet::new();
        for record in &prompts {
            if !ids.insert(record.id.as_str()) {
                return Err(Error::Input(format!("prompt id '{}' listed twice", record.id)));
            }
        }
        let shape = vectors.first().map(HVector::shape);
        let mut index = HashMap::with_capacity(vectors.len());
        for (i, h) in vectors.iter().enumerate() {
            if Some(h.shape()) != shape {
                return Err(Error::Input(format!(
                    "vector ({}, seed {}) has shape {}, archive shape is {}",
                    h.prompt_id,
                    h.seed,
                    h.shape(),
                    shape.unwrap()
                )));
            }
            if !ids.contains(h.prompt_id.as_str()) {
                return Err(Error::Input(format!(
                    "vector references unknown prompt id '{}'",
                    h.prompt_id
                )));
            }
            if h.config_hash != config_hash {
                return Err(Error::Input(format!(
                    "vector ({}, seed {}) was captured under config {}, archive config is {}",
                    h.prompt_id, h.seed, h.config_hash, config_hash
                )));
            }
            let key = (h.prompt_id.clone(), h.seed, h.capture_step);
            if index.insert(key, i).is_some() {
                return Err(Error::Input(format!(
                    "duplicate entry (prompt {}, seed {}, step {})",
                    h.prompt_id, h.seed, h.capture_step
                )));
            }
        }
        Ok(Self {
            config,
            config_hash,
            prompts,
            vectors,
            index,
            complete: true,
            resume: None,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn prompts(&self) -> &[PromptRecord] {
        &self.prompts
    }

    pub fn prompt(&self, id: &str) -> Option<&PromptRecord> {
        self.prompts.iter().find(|p| p.id == id)
    }

    pub fn vectors(&self) -> &[HVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn shape(&self) -> Option<Shape> {
        self.vectors.first().map(HVector::shape)
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn resume_token(&self) -> Option<&ResumeToken> {
        self.resume.as_ref()
    }

    pub fn mark_incomplete(mut self, resume: ResumeToken) -> Self {
        self.complete = false;
        self.resume = Some(resume);
        self
    }

    /// Sorted distinct seeds present in the archive.
    pub fn seeds(&self) -> Vec<u64> {
        let set: BTreeSet<u64> = self.vectors.iter().map(|h| h.seed).collect();
        set.into_iter().collect()
    }

    /// Vector for `(prompt_id, seed)` at the configured capture step.
    pub fn get(&self, prompt_id: &str, seed: u64) -> Option<&HVector> {
        self.get_at(prompt_id, seed, self.config.capture_step)
    }

    pub fn get_at(&self, prompt_id: &str, seed: u64, capture_step: u32) -> Option<&HVector> {
        self.index
            .get(&(prompt_id.to_string(), seed, capture_step))
            .map(|&i| &self.vectors[i])
    }

    pub fn contains(&self, prompt_id: &str, seed: u64) -> bool {
        self.get(prompt_id, seed).is_some()
    }

    fn manifest(&self) -> Manifest {
        let mut offset = 0u64;
        let entries = self
            .vectors
            .iter()
            .map(|h| {
                let length = (h.values().len() * 4) as u64;
                let entry = IndexEntry {
                    prompt_id: h.prompt_id.clone(),
                    seed: h.seed,
                    capture_step: h.capture_step,
                    offset,
                    length,
                    shape: h.shape(),
                };
                offset += length;
                entry
            })
            .collect();
        Manifest {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            complete: self.complete,
            resume: self.resume.clone(),
            prompts: self.prompts.clone(),
            entries,
        }
    }

    /// Write manifest and data atomically (temp file, then rename).
    pub fn write(&self, base: &Path) -> Result<ArchiveSummary> {
        let (manifest_path, data_path) = archive_paths(base);
        if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut data = Vec::with_capacity(self.vectors.iter().map(|h| h.values().len() * 4).sum());
        for h in &self.vectors {
            for v in h.values() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = self.manifest();
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        write_atomic(&data_path, &data)?;
        write_atomic(&manifest_path, &text)?;
        Ok(ArchiveSummary {
            manifest_path,
            data_path,
            entries: self.vectors.len(),
            prompts: self.prompts.len(),
            seeds: self.seeds().len(),
            total_bytes: data.len() as u64,
        })
    }

    pub fn read(base: &Path) -> Result<Self> {
        let (manifest_path, data_path) = archive_paths(base);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", manifest_path.display())))?;
        match raw.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(Error::Validation(format!(
                    "{}: schema_version {v} unsupported (expected {SCHEMA_VERSION})",
                    manifest_path.display()
                )))
            }
            None => {
                return Err(Error::Validation(format!(
                    "{}: missing schema_version",
                    manifest_path.display()
                )))
            }
        }
        let manifest: Manifest = serde_json::from_value(raw)
            .map_err(|e| Error::Validation(format!("{}: {e}", manifest_path.display())))?;
        let data = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        Self::from_manifest(manifest, &data, &data_path)
    }

    fn from_manifest(manifest: Manifest, data: &[u8], data_path: &Path) -> Result<Self> {
        if manifest.config.hash() != manifest.config_hash {
            return Err(Error::Validation(format!(
                "config_hash {} does not match the stored config ({})",
                manifest.config_hash,
                manifest.config.hash()
            )));
        }
        let ids: BTreeSet<&str> = manifest.prompts.iter().map(|p| p.id.as_str()).collect();
        let mut vectors = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let name = format!(
                "(prompt {}, seed {}, step {})",
                entry.prompt_id, entry.seed, entry.capture_step
            );
            if !ids.contains(entry.prompt_id.as_str()) {
                return Err(Error::Validation(format!(
                    "entry {name} references unknown prompt id"
                )));
            }
            if entry.length != (entry.shape.len() * 4) as u64 {
                return Err(Error::Validation(format!(
                    "entry {name} length {} does not match shape {}",
                    entry.length, entry.shape
                )));
            }
            let end = entry.offset.checked_add(entry.length);
            let Some(end) = end.filter(|&end| end <= data.len() as u64) else {
                return Err(Error::io(
                    data_path,
                    io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        format!(
                            "entry {name} needs bytes {}..{} but the data file holds {}",
                            entry.offset,
                            entry.offset.saturating_add(entry.length),
                            data.len()
                        ),
                    ),
                ));
            };
            let bytes = &data[entry.offset as usize..end as usize];
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let h = HVector::new(
                values,
                entry.shape,
                entry.prompt_id.clone(),
                entry.seed,
                entry.capture_step,
                manifest.config_hash.clone(),
            )
            .map_err(|e| Error::Validation(format!("entry {name}: {e}")))?;
            vectors.push(h);
        }
        let mut archive = Self::from_parts(manifest.config, manifest.prompts, vectors)
            .map_err(|e| Error::Validation(e.to_string()))?;
        archive.complete = manifest.complete;
        archive.resume = manifest.resume;
        Ok(archive)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Validate inputs and write an archive in one call.
pub fn write_archive(
    base: &Path,
    config: &BackendConfig,
    records: &[PromptRecord],
    vectors: &[HVector],
) -> Result<ArchiveSummary> {
    VectorArchive::from_parts(config.clone(), records.to_vec(), vectors.to_vec())?.write(base)
}

pub fn read_archive(base: &Path) -> Result<VectorArchive> {
    VectorArchive::read(base)
}
