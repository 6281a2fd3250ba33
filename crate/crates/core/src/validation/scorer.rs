//! Zero-shot text-image scorers.
//!
//! A scorer returns one similarity logit per candidate label; softmax
//! normalisation happens in [`super::classify_images`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const URL_ENV: &str = "HSPACE_SCORER_URL";

/// One generated image on disk, named `<prompt id>__seed<seed>.png`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ImageRef {
    pub path: PathBuf,
    pub prompt_id: String,
    pub seed: u64,
}

impl ImageRef {
    pub fn stem(&self) -> String {
        crate::sampling::image_file_name(&self.prompt_id, self.seed)
            .trim_end_matches(".png")
            .to_string()
    }
}

pub trait ImageScorer: Send {
    fn name(&self) -> &str;
    fn logits(&mut self, image: &ImageRef, labels: &[String]) -> Result<Vec<f64>>;
}

/// Scores read from a JSON table `{"<stem>": {"<label>": logit}}`.
#[derive(Debug, Clone, Default)]
pub struct FixtureScorer {
    table: BTreeMap<String, BTreeMap<String, f64>>,
}

impl FixtureScorer {
    pub fn new(table: BTreeMap<String, BTreeMap<String, f64>>) -> Self {
        Self { table }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Backend(format!("scorer fixture {}: {e}", path.display())))?;
        let table = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("scorer fixture {}: {e}", path.display())))?;
        Ok(Self { table })
    }
}

impl ImageScorer for FixtureScorer {
    fn name(&self) -> &str {
        "fixture"
    }

    fn logits(&mut self, image: &ImageRef, labels: &[String]) -> Result<Vec<f64>> {
        let stem = image.stem();
        let row = self
            .table
            .get(&stem)
            .ok_or_else(|| Error::Backend(format!("fixture has no scores for {stem}")))?;
        labels
            .iter()
            .map(|l| {
                row.get(l)
                    .copied()
                    .ok_or_else(|| Error::Backend(format!("fixture has no score for '{l}' on {stem}")))
            })
            .collect()
    }
}

/// HTTP scorer: `POST <url>/v1/score {"image_png": base64, "labels": [..]}`
/// answering `{"logits": [..]}`.
pub struct RemoteScorer {
    url: String,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ScoreResponse {
    logits: Vec<f64>,
}

impl RemoteScorer {
    pub fn connect(url: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Backend(format!("scorer client: {e}")))?;
        Ok(Self {
            url: url.into().trim_end_matches('/').to_string(),
            client,
        })
    }
}

impl ImageScorer for RemoteScorer {
    fn name(&self) -> &str {
        "remote"
    }

    fn logits(&mut self, image: &ImageRef, labels: &[String]) -> Result<Vec<f64>> {
        let bytes = std::fs::read(&image.path).map_err(|e| Error::io(&image.path, e))?;
        let body = serde_json::json!({
            "image_png": base64::engine::general_purpose::STANDARD.encode(bytes),
            "labels": labels,
        });
        let resp = self
            .client
            .post(format!("{}/v1/score", self.url))
            .json(&body)
            .send()
            .map_err(|e| Error::Backend(format!("scorer unavailable at {}: {e}", self.url)))?;
        if !resp.status().is_success() {
            return Err(Error::Backend(format!("scorer answered {}", resp.status())));
        }
        let parsed: ScoreResponse = resp
            .json()
            .map_err(|e| Error::Backend(format!("scorer response: {e}")))?;
        if parsed.logits.len() != labels.len() {
            return Err(Error::Backend(format!(
                "scorer returned {} logits for {} labels",
                parsed.logits.len(),
                labels.len()
            )));
        }
        Ok(parsed.logits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: String,
    /// Fixture table for `fixture`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Server for `remote`; falls back to `HSPACE_SCORER_URL`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

pub type ScorerFactory = Arc<dyn Fn(&ScorerConfig) -> Result<Box<dyn ImageScorer>> + Send + Sync>;

#[derive(Clone)]
pub struct ScorerRegistry {
    factories: BTreeMap<String, ScorerFactory>,
}

impl Default for ScorerRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ScorerRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(
            "fixture",
            Arc::new(|c| {
                let path = c
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("path: fixture scorer needs a table path".into()))?;
                Ok(Box::new(FixtureScorer::read(path)?))
            }),
        );
        r.register(
            "remote",
            Arc::new(|c| {
                let url = match &c.url {
                    Some(u) => u.clone(),
                    None => std::env::var(URL_ENV)
                        .map_err(|_| Error::Config(format!("url: not given and {URL_ENV} is unset")))?,
                };
                Ok(Box::new(RemoteScorer::connect(url)?))
            }),
        );
        r
    }

    pub fn register(&mut self, kind: impl Into<String>, factory: ScorerFactory) {
        self.factories.insert(kind.into(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn load(&self, config: &ScorerConfig) -> Result<Box<dyn ImageScorer>> {
        let f = self
            .factories
            .get(&config.kind)
            .ok_or_else(|| Error::Config(format!("kind: unknown scorer '{}'", config.kind)))?;
        f(config)
    }
}
