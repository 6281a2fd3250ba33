use std::path::PathBuf;

use hspace_core::clustering::report::cluster_report;
use hspace_core::clustering::{build_cluster_map, ClusterParams, ClusterSpace, ClusteringRegistry};
use hspace_core::ingest::textgen::{ServiceConfig, TextGenRegistry};
use hspace_core::ingest::TextGenService;
use hspace_core::store::VectorArchive;
use hspace_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::{default_out, ensure_dir, write_json, Ran};

pub const SERVICE_URL_ENV: &str = "HSPACE_TEXTGEN_URL";
pub const SERVICE_MODEL_ENV: &str = "HSPACE_TEXTGEN_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub archive: PathBuf,
    /// Which sampling seed's vectors to map; the smallest seed when absent.
    #[serde(default)]
    pub sampling_seed: Option<u64>,
    #[serde(default = "default_perplexity")]
    pub perplexity: f64,
    #[serde(default = "default_min_size")]
    pub min_cluster_size: usize,
    #[serde(default)]
    pub embed_seed: u64,
    #[serde(default)]
    pub space: ClusterSpace,
    #[serde(default = "default_embedder")]
    pub embedder: String,
    #[serde(default = "default_clusterer")]
    pub clusterer: String,
    #[serde(default)]
    pub summarize: bool,
    #[serde(default)]
    pub service: Option<ServiceConfig>,
}

fn default_perplexity() -> f64 {
    hspace_core::clustering::DEFAULT_PERPLEXITY
}

fn default_min_size() -> usize {
    hspace_core::clustering::DEFAULT_MIN_CLUSTER_SIZE
}

fn default_embedder() -> String {
    "tsne".into()
}

fn default_clusterer() -> String {
    "hdbscan".into()
}

fn service_from_env() -> Result<ServiceConfig> {
    let endpoint = std::env::var(SERVICE_URL_ENV)
        .map_err(|_| Error::Config(format!("service: no service section and {SERVICE_URL_ENV} is unset")))?;
    let model = std::env::var(SERVICE_MODEL_ENV).unwrap_or_else(|_| "gpt-4o-mini".into());
    Ok(ServiceConfig::new(endpoint, model))
}

fn connect(config: &ClusterConfig) -> Option<Box<dyn TextGenService>> {
    let service = match config.service.clone().map(Ok).unwrap_or_else(service_from_env) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("summaries disabled: {e}");
            return None;
        }
    };
    let mut service = service;
    if service.audit_dir.is_none() {
        service.audit_dir = Some(config.out.join("audit"));
    }
    match TextGenRegistry::with_builtins().connect(&service) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("summaries disabled: {e}");
            None
        }
    }
}

pub fn run(config: &ClusterConfig) -> Result<Ran> {
    let archive = VectorArchive::read(&config.archive)?;
    let sampling_seed = match config.sampling_seed {
        Some(s) => s,
        None => *archive
            .seeds()
            .first()
            .ok_or_else(|| Error::Input("archive holds no vectors".into()))?,
    };
    let params = ClusterParams {
        sampling_seed,
        perplexity: config.perplexity,
        min_cluster_size: config.min_cluster_size,
        embed_seed: config.embed_seed,
        space: config.space,
        embedder: config.embedder.clone(),
        clusterer: config.clusterer.clone(),
    };
    let mut map = build_cluster_map(&archive, &params, &ClusteringRegistry::with_builtins())?;
    log::info!(
        "{} clusters, {} noise points",
        map.cluster_ids.len(),
        map.labels.values().filter(|&&l| l < 0).count()
    );
    ensure_dir(&config.out)?;
    let map_path = map.write(&config.out.join("cluster_map"), &archive)?;
    let mut service = if config.summarize { connect(config) } else { None };
    let report = match service.as_mut() {
        Some(s) => cluster_report(&map, &archive, Some(s.as_mut())),
        None => cluster_report(&map, &archive, None),
    };
    let md = config.out.join("cluster_report.md");
    let json = config.out.join("cluster_report.json");
    std::fs::write(&md, report.to_markdown()).map_err(|e| Error::Io { path: md.clone(), source: e })?;
    write_json(&json, &report)?;
    let (avg_manifest, avg_data) = hspace_core::store::archive_paths(&config.out.join("cluster_map.averages"));
    Ok(Ran {
        inputs: vec![config.archive.clone()],
        outputs: vec![map_path, avg_manifest, avg_data, md, json],
    })
}
