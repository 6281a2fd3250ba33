//! Single-consumer generation queue. One worker thread owns the backend
//! handle, so at most one generation runs at a time and jobs finish in
//! submission order.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};

use hspace_core::backend::{DiffusionBackend, HVector};
use hspace_core::clustering::combine_clusters;
use hspace_core::Error;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed { error: String },
}

pub struct Job {
    pub id: String,
    pub averages: Vec<HVector>,
    pub weights: Vec<f64>,
    pub prompt: String,
    pub seed: u64,
    pub scale: f32,
}

#[derive(Default)]
struct Book {
    pending: VecDeque<String>,
    jobs: HashMap<String, JobStatus>,
}

pub struct Queue {
    tx: Mutex<mpsc::Sender<Job>>,
    book: Arc<Mutex<Book>>,
    config_hash: String,
}

pub fn image_name(id: &str) -> String {
    format!("{id}.png")
}

impl Queue {
    pub fn start(mut backend: Box<dyn DiffusionBackend>, images: PathBuf) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        let book = Arc::new(Mutex::new(Book::default()));
        let config_hash = backend.config_hash();
        let worker_book = book.clone();
        std::thread::Builder::new()
            .name("generation".into())
            .spawn(move || {
                for job in rx {
                    {
                        let mut b = worker_book.lock().unwrap();
                        b.pending.retain(|p| p != &job.id);
                        b.jobs.insert(job.id.clone(), JobStatus::Running);
                    }
                    let status = match generate(backend.as_mut(), &job, &images) {
                        Ok(()) => JobStatus::Done,
                        Err(e) => {
                            log::warn!("generation {} failed: {e}", job.id);
                            JobStatus::Failed { error: e.to_string() }
                        }
                    };
                    worker_book.lock().unwrap().jobs.insert(job.id, status);
                }
            })
            .expect("spawn generation worker");
        Self {
            tx: Mutex::new(tx),
            book,
            config_hash,
        }
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Enqueue unless the same request is already known. Returns the status
    /// and the number of jobs ahead of it.
    pub fn submit(&self, job: Job) -> (JobStatus, usize) {
        let mut book = self.book.lock().unwrap();
        if let Some(status) = book.jobs.get(&job.id).cloned() {
            if !matches!(status, JobStatus::Failed { .. }) {
                let ahead = book.pending.iter().position(|p| p == &job.id).unwrap_or(0);
                return (status, ahead);
            }
        }
        let ahead = book.pending.len() + usize::from(book.jobs.values().any(|s| *s == JobStatus::Running));
        book.pending.push_back(job.id.clone());
        book.jobs.insert(job.id.clone(), JobStatus::Queued);
        let sent = self.tx.lock().unwrap().send(job);
        if let Err(mpsc::SendError(job)) = sent {
            book.pending.retain(|p| p != &job.id);
            let failed = JobStatus::Failed {
                error: "generation worker stopped".into(),
            };
            book.jobs.insert(job.id, failed.clone());
            return (failed, 0);
        }
        (JobStatus::Queued, ahead)
    }

    pub fn status(&self, id: &str) -> Option<(JobStatus, usize)> {
        let book = self.book.lock().unwrap();
        let status = book.jobs.get(id)?.clone();
        let ahead = book.pending.iter().position(|p| p == id).unwrap_or(0);
        Some((status, ahead))
    }

    pub fn pending(&self) -> usize {
        self.book.lock().unwrap().pending.len()
    }

    pub fn mark_done(&self, id: &str) {
        self.book.lock().unwrap().jobs.insert(id.to_string(), JobStatus::Done);
    }
}

fn generate(backend: &mut dyn DiffusionBackend, job: &Job, images: &Path) -> hspace_core::Result<()> {
    let offset = combine_clusters(&job.averages, Some(&job.weights))?;
    let image = backend.generate_with_offset(&job.prompt, job.seed, &offset, job.scale)?;
    let png = image.to_png()?;
    let path = images.join(image_name(&job.id));
    let tmp = images.join(format!(".{}.tmp", image_name(&job.id)));
    std::fs::write(&tmp, png).map_err(|e| Error::Io { path: tmp.clone(), source: e })?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::Io { path, source: e })
}
