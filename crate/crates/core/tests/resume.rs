use hspace_core::backend::planted::{PlantedBackend, PlantedModel};
use hspace_core::backend::{BackendConfig, DiffusionBackend, Injection, RunOutput, Shape};
use hspace_core::sampling::{default_seeds, run_job, run_job_sharded, PromptRecord, Role, SamplingJob};
use hspace_core::store::{archive_paths, VectorArchive};
use hspace_core::{Error, Result};

/// Delegates to a planted backend and fails once `limit` runs have happened.
struct Interrupting {
    inner: PlantedBackend,
    runs: usize,
    limit: usize,
}

impl DiffusionBackend for Interrupting {
    fn name(&self) -> &str {
        "interrupting"
    }

    fn config(&self) -> &BackendConfig {
        self.inner.config()
    }

    fn bottleneck_shape(&self) -> Shape {
        self.inner.bottleneck_shape()
    }

    fn run(&mut self, prompt: &str, seed: u64, injection: Option<Injection<'_>>) -> Result<RunOutput> {
        if self.runs == self.limit {
            return Err(Error::Backend("simulated device loss".into()));
        }
        self.runs += 1;
        self.inner.run(prompt, seed, injection)
    }
}

fn model() -> PlantedModel {
    serde_json::from_str(r#"{"shape": [4, 2, 2], "terms": {"pie": 0.5, "cake": 0.3}}"#).unwrap()
}

fn config() -> BackendConfig {
    BackendConfig {
        backend: "planted".into(),
        model: "planted://inline".into(),
        adapter: "none".into(),
        image_size: 16,
        ..BackendConfig::default()
    }
}

fn job(dir: &std::path::Path, name: &str) -> SamplingJob {
    let prompts = (0..10)
        .map(|i| PromptRecord::new(format!("p{i}"), format!("a photo of pie number {i}"), Role::Corpus))
        .collect();
    SamplingJob {
        backend: config(),
        prompts,
        seeds: default_seeds(60).unwrap(),
        output: dir.join(name),
        images: None,
    }
}

fn backend(limit: usize) -> Interrupting {
    Interrupting {
        inner: PlantedBackend::from_model(&config(), model()).unwrap(),
        runs: 0,
        limit,
    }
}

fn bytes(base: &std::path::Path) -> (Vec<u8>, Vec<u8>) {
    let (m, d) = archive_paths(base);
    (std::fs::read(m).unwrap(), std::fs::read(d).unwrap())
}

#[test]
fn interrupted_job_resumes_to_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let reference = job(dir.path(), "reference");
    run_job(&reference, &mut backend(usize::MAX)).unwrap();

    let resumed = job(dir.path(), "resumed");
    let err = run_job(&resumed, &mut backend(30)).unwrap_err();
    assert!(matches!(err, Error::Backend(_)));
    assert!(err.to_string().contains("after 30/600"), "{err}");
    let partial = VectorArchive::read(&resumed.output).unwrap();
    assert!(!partial.is_complete());
    assert_eq!(partial.len(), 30);
    let token = partial.resume_token().unwrap();
    assert_eq!((token.next_prompt.as_str(), token.next_seed), ("p0", 3));

    // The second run only samples what is missing.
    let mut second = backend(570);
    run_job(&resumed, &mut second).unwrap();
    assert_eq!(second.runs, 570);
    assert_eq!(bytes(&reference.output), bytes(&resumed.output));
}

#[test]
fn sharded_equals_single() {
    let dir = tempfile::tempdir().unwrap();
    let single = job(dir.path(), "single");
    run_job(&single, &mut backend(usize::MAX)).unwrap();
    let sharded = job(dir.path(), "sharded");
    let handles: Vec<Box<dyn DiffusionBackend>> = (0..3).map(|_| Box::new(backend(usize::MAX)) as Box<dyn DiffusionBackend>).collect();
    run_job_sharded(&sharded, handles).unwrap();
    assert_eq!(bytes(&single.output), bytes(&sharded.output));
}
