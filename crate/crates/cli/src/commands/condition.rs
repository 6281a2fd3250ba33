use std::path::PathBuf;

use hspace_core::backend::{load_backend, BackendConfig};
use hspace_core::clustering::{cluster_label, combine_clusters, ClusterMap};
use hspace_core::store::VectorArchive;
use hspace_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::{default_out, ensure_dir, Ran};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// A cluster map JSON, or an averages archive holding `cluster-<id>` vectors.
    pub map: PathBuf,
    pub clusters: Vec<i64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub prompt: String,
    pub seed: u64,
    #[serde(default = "default_scale")]
    pub scale: f32,
    /// Defaults to the config the map's vectors were sampled under.
    #[serde(default)]
    pub backend: Option<BackendConfig>,
}

fn default_scale() -> f32 {
    1.0
}

pub fn image_name(clusters: &[i64], seed: u64, scale: f32) -> String {
    let ids: Vec<String> = clusters.iter().map(i64::to_string).collect();
    format!("condition_{}_seed{seed}_scale{scale}.png", ids.join("+"))
}

pub fn run(config: &ConditionConfig) -> Result<Ran> {
    if config.clusters.is_empty() {
        return Err(Error::Input("clusters: give at least one cluster id".into()));
    }
    let is_map = config.map.extension().and_then(|e| e.to_str()) == Some("json")
        && !config.map.to_string_lossy().ends_with(hspace_core::store::MANIFEST_SUFFIX);
    let (averages, sampled_under) = if is_map {
        let map = ClusterMap::read(&config.map)?;
        let averages = config
            .clusters
            .iter()
            .map(|&id| map.average(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        let base = config.map.with_extension("averages");
        let sampled = VectorArchive::read(&base).ok().map(|a| a.config().clone());
        (averages, sampled)
    } else {
        let archive = VectorArchive::read(&config.map)?;
        let seed = archive.seeds().first().copied().unwrap_or(0);
        let averages = config
            .clusters
            .iter()
            .map(|&id| {
                archive
                    .get(&cluster_label(id), seed)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("unknown cluster id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        (averages, Some(archive.config().clone()))
    };
    let offset = combine_clusters(&averages, config.weights.as_deref())?;
    let backend_config = config
        .backend
        .clone()
        .or(sampled_under)
        .ok_or_else(|| Error::Config("backend: no backend section and the map has no averages archive".into()))?;
    let mut backend = load_backend(&backend_config)?;
    let image = backend.generate_with_offset(&config.prompt, config.seed, &offset, config.scale)?;
    ensure_dir(&config.out)?;
    let path = config.out.join(image_name(&config.clusters, config.seed, config.scale));
    image.write_png(&path)?;
    Ok(Ran {
        inputs: vec![config.map.clone()],
        outputs: vec![path],
    })
}
