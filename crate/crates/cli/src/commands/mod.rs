pub mod analyze;
pub mod cluster;
pub mod condition;
pub mod corpus;
pub mod sample;
pub mod serve;
pub mod validate;

use std::path::{Path, PathBuf};

use hspace_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Files a command read and wrote.
#[derive(Debug, Default)]
pub struct Ran {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub fn default_out() -> PathBuf {
    PathBuf::from("out")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Parse a config document, reporting the offending field on failure.
pub fn from_value<T: DeserializeOwned>(value: Value, command: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{command} config: {e}")))
}

/// Overlay `Some` flag values onto a config document.
pub fn overlay(base: &mut Value, key: &str, flag: Option<Value>) {
    if let Some(v) = flag {
        if !base.is_object() {
            *base = Value::Object(Default::default());
        }
        base[key] = v;
    }
}

/// Execute a resolved config. This is also what `replay` calls.
pub fn run_command(command: &str, config: &Value) -> Result<Ran> {
    let c = config.clone();
    match command {
        "sample" => sample::run(&from_value(c, command)?),
        "neutralize" => corpus::run_neutralize(&from_value(c, command)?),
        "draft" => corpus::run_draft(&from_value(c, command)?),
        "compare" => analyze::run_compare(&from_value(c, command)?),
        "rank" => analyze::run_rank(&from_value(c, command)?),
        "cluster" => cluster::run(&from_value(c, command)?),
        "condition" => condition::run(&from_value(c, command)?),
        "validate" => validate::run(&from_value(c, command)?),
        "serve" => serve::run(&from_value(c, command)?),
        other => Err(Error::Config(format!("command: unknown command '{other}'"))),
    }
}

/// The `out` directory named by a config document.
pub fn out_of(config: &Value) -> PathBuf {
    config
        .get("out")
        .and_then(Value::as_str)
        .map(PathBuf::from)
        .unwrap_or_else(default_out)
}
