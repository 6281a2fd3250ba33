use std::path::PathBuf;

use hspace_core::backend::{BackendConfig, BackendRegistry, DiffusionBackend};
use hspace_core::ingest::{load_corpus, CorpusSpec, PairingSet};
use hspace_core::sampling::{run_job, run_job_sharded, PromptRecord, SamplingJob, DEFAULT_SEED_COUNT};
use hspace_core::store::archive_paths;
use hspace_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::{default_out, read_json, Ran};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub prompts: Vec<PromptRecord>,
    /// Caption file, corpus JSON or pairing set.
    #[serde(default)]
    pub prompts_file: Option<PathBuf>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub archive: Option<PathBuf>,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

/// `--seeds` takes a count (`60`), a range (`10..20`) or a list (`1,4,9`).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = |msg: String| Error::Config(format!("seeds: {msg}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad(format!("bad range start in '{text}'")))?;
        let b: u64 = b.trim().parse().map_err(|_| bad(format!("bad range end in '{text}'")))?;
        if b <= a {
            return Err(bad(format!("empty range '{text}'")));
        }
        return Ok((a..b).collect());
    }
    if text.contains(',') {
        return text
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| bad(format!("'{s}' is not a seed"))))
            .collect();
    }
    let n: i64 = text.trim().parse().map_err(|_| bad(format!("'{text}' is not a seed count")))?;
    hspace_core::sampling::default_seeds(n).map_err(|e| bad(e.to_string()))
}

fn load_prompts(path: &std::path::Path) -> Result<Vec<PromptRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if text.trim_start().starts_with('{') {
        let set: PairingSet = read_json(path)?;
        return Ok(set.prompts);
    }
    Ok(load_corpus(&CorpusSpec::new(path))?.records)
}

impl SampleConfig {
    pub fn archive_path(&self) -> PathBuf {
        self.archive.clone().unwrap_or_else(|| self.out.join("archive"))
    }

    /// Fill defaults so the stored config names every seed explicitly.
    pub fn resolve(mut self) -> Self {
        if self.seeds.is_none() {
            self.seeds = Some((0..DEFAULT_SEED_COUNT as u64).collect());
        }
        if self.archive.is_none() {
            self.archive = Some(self.archive_path());
        }
        self
    }

    fn job(&self) -> Result<SamplingJob> {
        let backend = self
            .backend
            .clone()
            .ok_or_else(|| Error::Config("backend: sample config needs a backend section".into()))?;
        let mut prompts = self.prompts.clone();
        if let Some(path) = &self.prompts_file {
            prompts.extend(load_prompts(path)?);
        }
        if prompts.is_empty() {
            return Err(Error::Config("prompts: no prompts given".into()));
        }
        let seeds = self
            .seeds
            .clone()
            .unwrap_or_else(|| (0..DEFAULT_SEED_COUNT as u64).collect());
        let job = SamplingJob {
            backend,
            prompts,
            seeds,
            output: self.archive_path(),
            images: self.images.clone(),
        };
        job.validate().map_err(|e| match e {
            Error::Input(m) => Error::Config(m),
            other => other,
        })?;
        Ok(job)
    }
}

pub fn run(config: &SampleConfig) -> Result<Ran> {
    let job = config.job()?;
    let registry = BackendRegistry::with_builtins();
    let workers = config.workers.max(1);
    let archive = if workers == 1 {
        let mut backend = registry.load(&job.backend)?;
        run_job(&job, backend.as_mut())?
    } else {
        let backends: Vec<Box<dyn DiffusionBackend>> = (0..workers)
            .map(|_| registry.load(&job.backend))
            .collect::<Result<_>>()?;
        run_job_sharded(&job, backends)?
    };
    log::info!("archived {} vectors into {}", archive.len(), job.output.display());
    let (manifest, data) = archive_paths(&job.output);
    let mut ran = Ran {
        outputs: vec![manifest, data],
        ..Ran::default()
    };
    if let Some(p) = &config.prompts_file {
        ran.inputs.push(p.clone());
    }
    let model = PathBuf::from(&job.backend.model);
    if model.is_file() {
        ran.inputs.push(model);
    }
    if let Some(dir) = &job.images {
        ran.outputs.push(dir.clone());
    }
    Ok(ran)
}
