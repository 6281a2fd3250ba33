//! Cluster maps over corpus h-vectors: a 2-D embedding, density clusters,
//! per-cluster average vectors and caption rosters.
//!
//! Embedding and clustering methods are strategies looked up by name in a
//! [`ClusteringRegistry`]; the builtins are `tsne` and `hdbscan`.

pub mod hdbscan;
pub mod report;
pub mod tsne;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{HVector, Shape};
use crate::error::{Error, Result};
use crate::sampling::{PromptRecord, Role};
use crate::store::VectorArchive;

pub use self::hdbscan::NOISE;

pub const DEFAULT_PERPLEXITY: f64 = 30.0;
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 15;

pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, points: &[Vec<f64>], perplexity: f64, seed: u64) -> Result<Vec<[f64; 2]>>;
}

pub trait Clusterer: Send + Sync {
    fn name(&self) -> &str;
    fn cluster(&self, points: &[Vec<f64>], min_cluster_size: usize) -> Result<Vec<i64>>;
}

pub struct TsneEmbedder;

impl Embedder for TsneEmbedder {
    fn name(&self) -> &str {
        "tsne"
    }

    fn embed(&self, points: &[Vec<f64>], perplexity: f64, seed: u64) -> Result<Vec<[f64; 2]>> {
        tsne::tsne(points, &tsne::TsneOptions::new(perplexity, seed))
    }
}

pub struct HdbscanClusterer;

impl Clusterer for HdbscanClusterer {
    fn name(&self) -> &str {
        "hdbscan"
    }

    fn cluster(&self, points: &[Vec<f64>], min_cluster_size: usize) -> Result<Vec<i64>> {
        hdbscan::hdbscan(points, &hdbscan::HdbscanOptions::new(min_cluster_size))
    }
}

#[derive(Clone)]
pub struct ClusteringRegistry {
    embedders: BTreeMap<String, Arc<dyn Embedder>>,
    clusterers: BTreeMap<String, Arc<dyn Clusterer>>,
}

impl Default for ClusteringRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ClusteringRegistry {
    pub fn with_builtins() -> Self {
        let mut registry = Self {
            embedders: BTreeMap::new(),
            clusterers: BTreeMap::new(),
        };
        registry.register_embedder(Arc::new(TsneEmbedder));
        registry.register_clusterer(Arc::new(HdbscanClusterer));
        registry
    }

    pub fn register_embedder(&mut self, embedder: Arc<dyn Embedder>) {
        self.embedders.insert(embedder.name().to_string(), embedder);
    }

    pub fn register_clusterer(&mut self, clusterer: Arc<dyn Clusterer>) {
        self.clusterers.insert(clusterer.name().to_string(), clusterer);
    }

    pub fn embedder(&self, name: &str) -> Result<&dyn Embedder> {
        self.embedders
            .get(name)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::Config(format!("embedder: unknown method '{name}'")))
    }

    pub fn clusterer(&self, name: &str) -> Result<&dyn Clusterer> {
        self.clusterers
            .get(name)
            .map(|c| c.as_ref())
            .ok_or_else(|| Error::Config(format!("clusterer: unknown method '{name}'")))
    }
}

/// Which points the density clustering runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSpace {
    /// The 2-D embedding coordinates.
    #[default]
    Embedded,
    /// The original flattened h-vectors.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub sampling_seed: u64,
    pub perplexity: f64,
    pub min_cluster_size: usize,
    pub embed_seed: u64,
    #[serde(default)]
    pub space: ClusterSpace,
    #[serde(default = "default_embedder")]
    pub embedder: String,
    #[serde(default = "default_clusterer")]
    pub clusterer: String,
}

fn default_embedder() -> String {
    "tsne".into()
}

fn default_clusterer() -> String {
    "hdbscan".into()
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            sampling_seed: 0,
            perplexity: DEFAULT_PERPLEXITY,
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
            embed_seed: 0,
            space: ClusterSpace::Embedded,
            embedder: default_embedder(),
            clusterer: default_clusterer(),
        }
    }
}

fn to_points(vectors: &[&HVector]) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .map(|h| h.values().iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// 2-D t-SNE coordinates for vectors that all share one sampling seed.
pub fn embed_2d(vectors: &[&HVector], perplexity: f64, embed_seed: u64) -> Result<Vec<[f64; 2]>> {
    if let Some(first) = vectors.first() {
        if let Some(other) = vectors.iter().find(|h| h.seed != first.seed) {
            return Err(Error::Input(format!(
                "embedding mixes sampling seeds {} and {}",
                first.seed, other.seed
            )));
        }
    }
    TsneEmbedder.embed(&to_points(vectors), perplexity, embed_seed)
}

/// HDBSCAN labels over 2-D coordinates; `-1` is noise.
pub fn cluster(coordinates: &[[f64; 2]], min_cluster_size: usize) -> Result<Vec<i64>> {
    let points: Vec<Vec<f64>> = coordinates.iter().map(|c| c.to_vec()).collect();
    HdbscanClusterer.cluster(&points, min_cluster_size)
}

/// Renumber clusters by (size descending, smallest member id) so ids do not
/// depend on input order or library internals.
pub fn canonicalize_labels(ids: &[String], labels: &[i64]) -> Vec<i64> {
    let mut members: BTreeMap<i64, Vec<&str>> = BTreeMap::new();
    for (id, &label) in ids.iter().zip(labels) {
        if label != NOISE {
            members.entry(label).or_default().push(id.as_str());
        }
    }
    let mut order: Vec<(i64, usize, &str)> = members
        .iter()
        .map(|(&label, m)| (label, m.len(), *m.iter().min().expect("non-empty")))
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.2.cmp(b.2)));
    let remap: BTreeMap<i64, i64> = order
        .iter()
        .enumerate()
        .map(|(new, &(old, _, _))| (old, new as i64))
        .collect();
    labels
        .iter()
        .map(|l| if *l == NOISE { NOISE } else { remap[l] })
        .collect()
}

fn average_of(members: &[&HVector], label: String, seed: u64) -> Result<HVector> {
    let first = members
        .first()
        .ok_or_else(|| Error::Input("cannot average an empty cluster".into()))?;
    let shape = first.shape();
    let mut sum = vec![0.0f64; shape.len()];
    for h in members {
        if h.shape() != shape {
            return Err(Error::Input(format!(
                "cluster members disagree in shape ({} vs {shape})",
                h.shape()
            )));
        }
        for (s, &v) in sum.iter_mut().zip(h.values()) {
            *s += f64::from(v);
        }
    }
    let n = members.len() as f64;
    let values: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
    if values.iter().all(|&v| v == 0.0) {
        log::warn!("average of {label} has zero norm and is unusable as an offset");
    }
    HVector::new(values, shape, label, seed, first.capture_step, first.config_hash.clone())
}

pub fn cluster_label(cluster_id: i64) -> String {
    format!("cluster-{cluster_id}")
}

/// Elementwise mean of the members of `cluster_id` under `seed`.
pub fn cluster_average(
    archive: &VectorArchive,
    labels: &BTreeMap<String, i64>,
    cluster_id: i64,
    seed: u64,
) -> Result<HVector> {
    if cluster_id == NOISE {
        return Err(Error::Input("noise (-1) is not a cluster".into()));
    }
    let ids: Vec<&String> = labels
        .iter()
        .filter(|(_, &l)| l == cluster_id)
        .map(|(id, _)| id)
        .collect();
    if ids.is_empty() {
        return Err(Error::Input(format!("unknown cluster id {cluster_id}")));
    }
    let mut members = Vec::with_capacity(ids.len());
    for id in ids {
        members.push(archive.get(id, seed).ok_or_else(|| {
            Error::Data(format!("no vector for (prompt {id}, seed {seed})"))
        })?);
    }
    average_of(&members, cluster_label(cluster_id), seed)
}

/// Weighted sum of cluster averages; weights default to 1.0 each.
pub fn combine_clusters(averages: &[HVector], weights: Option<&[f64]>) -> Result<HVector> {
    let first = averages
        .first()
        .ok_or_else(|| Error::Input("no cluster averages to combine".into()))?;
    let ones = vec![1.0; averages.len()];
    let weights = weights.unwrap_or(&ones);
    if weights.len() != averages.len() {
        return Err(Error::Input(format!(
            "{} weights for {} averages",
            weights.len(),
            averages.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::Input(format!("weight {w} is not finite")));
    }
    let shape = first.shape();
    let mut sum = vec![0.0f64; shape.len()];
    for (h, &w) in averages.iter().zip(weights) {
        if h.shape() != shape {
            return Err(Error::Input(format!(
                "cannot combine shapes {} and {shape}",
                h.shape()
            )));
        }
        for (s, &v) in sum.iter_mut().zip(h.values()) {
            *s += w * f64::from(v);
        }
    }
    let label = averages
        .iter()
        .map(|h| h.prompt_id.as_str())
        .collect::<Vec<_>>()
        .join("+");
    HVector::new(
        sum.into_iter().map(|v| v as f32).collect(),
        shape,
        label,
        first.seed,
        first.capture_step,
        first.config_hash.clone(),
    )
}

/// Embedding, labels and averages for one sampling seed of an archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMap {
    pub params: ClusterParams,
    pub config_hash: String,
    pub coordinates: BTreeMap<String, [f64; 2]>,
    pub labels: BTreeMap<String, i64>,
    pub cluster_ids: Vec<i64>,
    pub rosters: BTreeMap<i64, Vec<String>>,
    /// Averages archive path, relative to the map file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averages_archive: Option<String>,
    #[serde(skip)]
    pub averages: BTreeMap<i64, HVector>,
}

impl ClusterMap {
    pub fn average(&self, cluster_id: i64) -> Result<&HVector> {
        self.averages
            .get(&cluster_id)
            .ok_or_else(|| Error::Data(format!("unknown cluster id {cluster_id}")))
    }

    pub fn validate(&self, archive_ids: &BTreeSet<String>) -> Result<()> {
        let coord_ids: BTreeSet<&String> = self.coordinates.keys().collect();
        let label_ids: BTreeSet<&String> = self.labels.keys().collect();
        let expected: BTreeSet<&String> = archive_ids.iter().collect();
        if coord_ids != expected || label_ids != expected {
            return Err(Error::Validation(
                "cluster map must hold one coordinate and one label per prompt".into(),
            ));
        }
        let used: BTreeSet<i64> = self.labels.values().copied().filter(|&l| l != NOISE).collect();
        let ids: BTreeSet<i64> = self.cluster_ids.iter().copied().collect();
        if used != ids {
            return Err(Error::Validation(format!(
                "labels use clusters {used:?} but cluster ids are {ids:?}"
            )));
        }
        if !self.averages.is_empty() {
            let avg: BTreeSet<i64> = self.averages.keys().copied().collect();
            if avg != ids {
                return Err(Error::Validation("averages must exist exactly for cluster ids".into()));
            }
        }
        for (id, roster) in &self.rosters {
            if roster.len() < self.params.min_cluster_size {
                return Err(Error::Validation(format!(
                    "cluster {id} has {} members, below min cluster size {}",
                    roster.len(),
                    self.params.min_cluster_size
                )));
            }
        }
        Ok(())
    }

    /// Averages as an archive with one synthetic prompt per cluster.
    pub fn averages_as_archive(&self, archive: &VectorArchive) -> Result<VectorArchive> {
        let prompts = self
            .cluster_ids
            .iter()
            .map(|&id| {
                PromptRecord::new(
                    cluster_label(id),
                    format!("average of cluster {id}"),
                    Role::Corpus,
                )
            })
            .collect();
        let vectors = self.cluster_ids.iter().map(|id| self.averages[id].clone()).collect();
        VectorArchive::from_parts(archive.config().clone(), prompts, vectors)
    }

    /// Write `<base>.json` and the averages archive `<base>.averages`.
    pub fn write(&mut self, base: &Path, archive: &VectorArchive) -> Result<std::path::PathBuf> {
        let json_path = base.with_extension("json");
        let averages_base = base.with_extension("averages");
        self.averages_as_archive(archive)?.write(&averages_base)?;
        self.averages_archive = averages_base
            .file_name()
            .map(|n| n.to_string_lossy().into_owned());
        let mut text = serde_json::to_vec_pretty(self)?;
        text.push(b'\n');
        if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
        Ok(json_path)
    }

    /// Read a map JSON and its averages archive.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map: ClusterMap = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        if let Some(name) = &map.averages_archive {
            let base = path.parent().unwrap_or(Path::new(".")).join(name);
            let averages = VectorArchive::read(&base)?;
            for &id in &map.cluster_ids {
                let h = averages.get(&cluster_label(id), map.params.sampling_seed).ok_or_else(|| {
                    Error::Validation(format!("averages archive lacks cluster {id}"))
                })?;
                map.averages.insert(id, h.clone());
            }
        }
        Ok(map)
    }

    pub fn bottleneck_shape(&self) -> Option<Shape> {
        self.averages.values().next().map(HVector::shape)
    }
}

/// Embed, cluster and summarise every prompt of `archive` under
/// `params.sampling_seed`. Points are processed in prompt-id order, so the
/// result does not depend on archive order.
pub fn build_cluster_map(
    archive: &VectorArchive,
    params: &ClusterParams,
    registry: &ClusteringRegistry,
) -> Result<ClusterMap> {
    let seed = params.sampling_seed;
    let mut ids: Vec<String> = archive.prompts().iter().map(|p| p.id.clone()).collect();
    ids.sort();
    let mut vectors = Vec::with_capacity(ids.len());
    for id in &ids {
        vectors.push(archive.get(id, seed).ok_or_else(|| {
            Error::Data(format!("no vector for (prompt {id}, seed {seed})"))
        })?);
    }
    let points = to_points(&vectors);
    let coords = registry
        .embedder(&params.embedder)?
        .embed(&points, params.perplexity, params.embed_seed)?;
    let clusterer = registry.clusterer(&params.clusterer)?;
    let raw = match params.space {
        ClusterSpace::Embedded => {
            let flat: Vec<Vec<f64>> = coords.iter().map(|c| c.to_vec()).collect();
            clusterer.cluster(&flat, params.min_cluster_size)?
        }
        ClusterSpace::Raw => clusterer.cluster(&points, params.min_cluster_size)?,
    };
    let labels = canonicalize_labels(&ids, &raw);

    let mut rosters: BTreeMap<i64, Vec<String>> = BTreeMap::new();
    for (id, &l) in ids.iter().zip(&labels) {
        if l != NOISE {
            rosters.entry(l).or_default().push(id.clone());
        }
    }
    let mut averages = BTreeMap::new();
    for (&cid, members) in &rosters {
        let hs: Vec<&HVector> = members
            .iter()
            .map(|id| vectors[ids.binary_search(id).expect("member id")])
            .collect();
        averages.insert(cid, average_of(&hs, cluster_label(cid), seed)?);
    }
    let map = ClusterMap {
        params: params.clone(),
        config_hash: archive.config_hash().to_string(),
        coordinates: ids.iter().cloned().zip(coords).collect(),
        labels: ids.iter().cloned().zip(labels).collect(),
        cluster_ids: rosters.keys().copied().collect(),
        rosters,
        averages_archive: None,
        averages,
    };
    map.validate(&ids.into_iter().collect())?;
    Ok(map)
}
