//! Prompt x seed sampling grids.
//!
//! Iteration is seed-major: every prompt is sampled under one seed before the
//! next seed starts, so an interrupted job still holds complete seed-paired
//! sets. Re-running a job against its own partial output skips finished
//! entries; the final archive is ordered canonically, so a resumed job writes
//! the same bytes as an uninterrupted one.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, DiffusionBackend, HVector};
use crate::error::{Error, Result};
use crate::store::{archive_paths, VectorArchive};

/// Seed count used when a job asks for a count instead of a list.
pub const DEFAULT_SEED_COUNT: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Concept,
    Neutral,
    Anchor,
    Corpus,
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concept" => Ok(Role::Concept),
            "neutral" => Ok(Role::Neutral),
            "anchor" => Ok(Role::Anchor),
            "corpus" => Ok(Role::Corpus),
            other => Err(Error::Input(format!("unknown role '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
}

impl PromptRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, role: Role) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            role,
            group: None,
            concept: None,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    pub fn with_concept(mut self, concept: impl Into<String>) -> Self {
        self.concept = Some(concept.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingJob {
    pub backend: BackendConfig,
    pub prompts: Vec<PromptRecord>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// When set, the plain image of every sample is written here as PNG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
}

impl SamplingJob {
    pub fn validate(&self) -> Result<()> {
        self.backend.validate()?;
        if self.prompts.is_empty() {
            return Err(Error::Input("prompts: job has no prompts".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Input("seeds: job has no seeds".into()));
        }
        let mut seen = HashSet::new();
        for seed in &self.seeds {
            if !seen.insert(*seed) {
                return Err(Error::Input(format!("seeds: seed {seed} listed twice")));
            }
        }
        let mut ids = HashSet::new();
        for p in &self.prompts {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Input(format!("prompts: id '{}' listed twice", p.id)));
            }
            if p.text.trim().is_empty() {
                return Err(Error::Input(format!("prompts: '{}' has empty text", p.id)));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.prompts.len() * self.seeds.len()
    }
}

/// Where an aborted job stopped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResumeToken {
    pub completed: usize,
    pub total: usize,
    pub next_seed: u64,
    pub next_prompt: String,
    pub reason: String,
}

/// Seeds `0..n`.
pub fn default_seeds(n: i64) -> Result<Vec<u64>> {
    if n <= 0 {
        return Err(Error::Input(format!("seed count must be positive, got {n}")));
    }
    Ok((0..n as u64).collect())
}

/// Canonical image file name for a sample.
pub fn image_file_name(prompt_id: &str, seed: u64) -> String {
    format!("{prompt_id}__seed{seed}.png")
}

/// Inverse of [`image_file_name`] on the file stem.
pub fn parse_image_stem(stem: &str) -> Option<(String, u64)> {
    let (id, seed) = stem.rsplit_once("__seed")?;
    Some((id.to_string(), seed.parse().ok()?))
}

struct Plan {
    existing: Vec<HVector>,
    pending: Vec<(usize, usize)>,
}

fn plan(job: &SamplingJob) -> Result<Plan> {
    let (manifest, _) = archive_paths(&job.output);
    let mut existing = Vec::new();
    if manifest.exists() {
        let archive = VectorArchive::read(&job.output)?;
        if archive.config_hash() != job.backend.hash() {
            return Err(Error::Config(format!(
                "output: {} was sampled under a different backend config",
                manifest.display()
            )));
        }
        let ids: HashSet<&str> = job.prompts.iter().map(|p| p.id.as_str()).collect();
        let seeds: HashSet<u64> = job.seeds.iter().copied().collect();
        for h in archive.vectors() {
            if !ids.contains(h.prompt_id.as_str()) || !seeds.contains(&h.seed) {
                return Err(Error::Input(format!(
                    "output: existing entry ({}, seed {}) is not part of this job",
                    h.prompt_id, h.seed
                )));
            }
        }
        existing = archive.vectors().to_vec();
    }
    let done: BTreeSet<(&str, u64)> = existing.iter().map(|h| (h.prompt_id.as_str(), h.seed)).collect();
    let mut pending = Vec::new();
    for (si, &seed) in job.seeds.iter().enumerate() {
        for (pi, p) in job.prompts.iter().enumerate() {
            if !done.contains(&(p.id.as_str(), seed)) {
                pending.push((si, pi));
            }
        }
    }
    Ok(Plan { existing, pending })
}

fn canonical(job: &SamplingJob, mut vectors: Vec<HVector>) -> Vec<HVector> {
    let seed_pos = |s: u64| job.seeds.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    let prompt_pos = |id: &str| job.prompts.iter().position(|p| p.id == id).unwrap_or(usize::MAX);
    vectors.sort_by_key(|h| (seed_pos(h.seed), prompt_pos(&h.prompt_id)));
    vectors
}

fn write(job: &SamplingJob, vectors: Vec<HVector>, resume: Option<ResumeToken>) -> Result<VectorArchive> {
    let vectors = canonical(job, vectors);
    let mut archive = VectorArchive::from_parts(job.backend.clone(), job.prompts.clone(), vectors)?;
    if let Some(token) = resume {
        archive = archive.mark_incomplete(token);
    }
    archive.write(&job.output)?;
    Ok(archive)
}

fn sample_one(
    job: &SamplingJob,
    backend: &mut dyn DiffusionBackend,
    seed_index: usize,
    prompt_index: usize,
    images: Option<&Path>,
) -> Result<HVector> {
    let prompt = &job.prompts[prompt_index];
    let seed = job.seeds[seed_index];
    let (h, image) = backend.sample_h(&prompt.text, seed)?;
    if let Some(dir) = images {
        image.write_png(&dir.join(image_file_name(&prompt.id, seed)))?;
    }
    Ok(h.with_prompt_id(prompt.id.clone()))
}

fn check_backend(job: &SamplingJob, backend: &dyn DiffusionBackend) -> Result<()> {
    if backend.config() != &job.backend {
        return Err(Error::Config(
            "backend: handle was loaded with a different config than the job".into(),
        ));
    }
    Ok(())
}

fn prepare_images(job: &SamplingJob) -> Result<()> {
    if let Some(dir) = &job.images {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn abort(job: &SamplingJob, done: Vec<HVector>, next: (usize, usize), err: Error) -> Error {
    let token = ResumeToken {
        completed: done.len(),
        total: job.total(),
        next_seed: job.seeds[next.0],
        next_prompt: job.prompts[next.1].id.clone(),
        reason: err.to_string(),
    };
    let summary = format!(
        "sampling stopped at (prompt {}, seed {}) after {}/{} entries; rerun the job to resume",
        token.next_prompt, token.next_seed, token.completed, token.total
    );
    match write(job, done, Some(token)) {
        Ok(_) => match err {
            Error::Backend(msg) => Error::Backend(format!("{msg}; {summary}")),
            other => other,
        },
        Err(write_err) => write_err,
    }
}

/// Sample every (prompt, seed) pair of `job` with one backend handle.
///
/// Progress is checkpointed to the output archive after every
/// `checkpoint_every` new entries (and on failure).
pub fn run_job_with(
    job: &SamplingJob,
    backend: &mut dyn DiffusionBackend,
    checkpoint_every: usize,
) -> Result<VectorArchive> {
    job.validate()?;
    check_backend(job, backend)?;
    prepare_images(job)?;
    let Plan { mut existing, pending } = plan(job)?;
    if !pending.is_empty() {
        log::info!(
            "sampling {} of {} entries into {}",
            pending.len(),
            job.total(),
            job.output.display()
        );
    }
    let every = checkpoint_every.max(1);
    for (n, &(si, pi)) in pending.iter().enumerate() {
        match sample_one(job, backend, si, pi, job.images.as_deref()) {
            Ok(h) => existing.push(h),
            Err(err) => return Err(abort(job, existing, (si, pi), err)),
        }
        if (n + 1) % every == 0 && n + 1 < pending.len() {
            let (si, pi) = pending[n + 1];
            let token = ResumeToken {
                completed: existing.len(),
                total: job.total(),
                next_seed: job.seeds[si],
                next_prompt: job.prompts[pi].id.clone(),
                reason: "checkpoint".into(),
            };
            write(job, existing.clone(), Some(token))?;
        }
    }
    write(job, existing, None)
}

/// [`run_job_with`], checkpointing after every completed seed row.
pub fn run_job(job: &SamplingJob, backend: &mut dyn DiffusionBackend) -> Result<VectorArchive> {
    let every = job.prompts.len().max(1);
    run_job_with(job, backend, every)
}

/// Vectors a worker finished, and the (seed, prompt) index it failed on.
type ShardResult = (Vec<HVector>, Option<((usize, usize), Error)>);

/// Shard the job's seeds round-robin across several backend handles, one
/// worker thread per handle, and merge into a single archive.
pub fn run_job_sharded(
    job: &SamplingJob,
    backends: Vec<Box<dyn DiffusionBackend>>,
) -> Result<VectorArchive> {
    job.validate()?;
    if backends.is_empty() {
        return Err(Error::Input("workers: need at least one backend handle".into()));
    }
    for b in &backends {
        check_backend(job, b.as_ref())?;
    }
    prepare_images(job)?;
    let Plan { mut existing, pending } = plan(job)?;
    let workers = backends.len();
    let results: Vec<ShardResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = backends
            .into_iter()
            .enumerate()
            .map(|(w, mut backend)| {
                let mine: Vec<(usize, usize)> =
                    pending.iter().copied().filter(|(si, _)| si % workers == w).collect();
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for (si, pi) in mine {
                        match sample_one(job, backend.as_mut(), si, pi, job.images.as_deref()) {
                            Ok(h) => out.push(h),
                            Err(e) => return (out, Some(((si, pi), e))),
                        }
                    }
                    (out, None)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampling worker panicked"))
            .collect()
    });
    let mut failure = None;
    for (vectors, err) in results {
        existing.extend(vectors);
        if failure.is_none() {
            failure = err;
        }
    }
    match failure {
        Some((next, err)) => Err(abort(job, existing, next, err)),
        None => write(job, existing, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::load_backend;

    fn job(dir: &Path, prompts: usize, seeds: usize) -> SamplingJob {
        SamplingJob {
            backend: BackendConfig {
                image_size: 64,
                num_inference_steps: 2,
                ..Default::default()
            },
            prompts: (0..prompts)
                .map(|i| PromptRecord::new(format!("p{i}"), format!("a photo of dish {i}"), Role::Corpus))
                .collect(),
            seeds: default_seeds(seeds as i64).unwrap(),
            output: dir.join("job"),
            images: None,
        }
    }

    #[test]
    fn default_seed_lists() {
        assert_eq!(default_seeds(3).unwrap(), vec![0, 1, 2]);
        assert_eq!(default_seeds(60).unwrap(), (0..60).collect::<Vec<u64>>());
        assert!(default_seeds(0).is_err());
        assert!(default_seeds(-4).is_err());
    }

    #[test]
    fn image_names_round_trip() {
        let name = image_file_name("c-ab__x", 17);
        let stem = name.strip_suffix(".png").unwrap();
        assert_eq!(parse_image_stem(stem), Some(("c-ab__x".to_string(), 17)));
        assert_eq!(parse_image_stem("nothing"), None);
    }

    #[test]
    fn grid_is_cartesian_and_seed_major() {
        let dir = tempfile::tempdir().unwrap();
        let job = job(dir.path(), 3, 4);
        let mut backend = load_backend(&job.backend).unwrap();
        let archive = run_job(&job, backend.as_mut()).unwrap();
        assert_eq!(archive.len(), 12);
        assert!(archive.is_complete());
        let order: Vec<(u64, &str)> = archive.vectors().iter().map(|h| (h.seed, h.prompt_id.as_str())).collect();
        assert_eq!(order[..4], [(0, "p0"), (0, "p1"), (0, "p2"), (1, "p0")]);
    }

    #[test]
    fn empty_seed_list_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut job = job(dir.path(), 2, 1);
        job.seeds.clear();
        let mut backend = load_backend(&job.backend).unwrap();
        assert!(matches!(run_job(&job, backend.as_mut()), Err(Error::Input(_))));
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut job = job(dir.path(), 2, 2);
        job.seeds = vec![3, 3];
        assert!(job.validate().is_err());
    }

    #[test]
    fn mismatched_backend_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let job = job(dir.path(), 2, 2);
        let other = BackendConfig {
            image_size: 128,
            ..job.backend.clone()
        };
        let mut backend = load_backend(&other).unwrap();
        assert!(matches!(run_job(&job, backend.as_mut()), Err(Error::Config(_))));
    }

    #[test]
    fn sharded_matches_single_handle() {
        let dir = tempfile::tempdir().unwrap();
        let single = job(&dir.path().join("a"), 3, 5);
        let sharded = job(&dir.path().join("b"), 3, 5);
        let mut backend = load_backend(&single.backend).unwrap();
        run_job(&single, backend.as_mut()).unwrap();
        let handles = (0..3).map(|_| load_backend(&sharded.backend).unwrap()).collect();
        run_job_sharded(&sharded, handles).unwrap();
        let a = std::fs::read(dir.path().join("a/job.hvec")).unwrap();
        let b = std::fs::read(dir.path().join("b/job.hvec")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn images_written_when_requested() {
        let dir = tempfile::tempdir().unwrap();
        let mut job = job(dir.path(), 2, 2);
        job.images = Some(dir.path().join("images"));
        let mut backend = load_backend(&job.backend).unwrap();
        run_job(&job, backend.as_mut()).unwrap();
        assert!(dir.path().join("images").join(image_file_name("p1", 1)).exists());
    }
}
