//! HTTP service for the interactive cluster explorer.
//!
//! Serves a loaded cluster map, the stored geometry reports and conditioned
//! generations. Generations go through a request-id plus polling contract:
//! `POST /api/condition` answers immediately with a request id and the
//! eventual image URL, and `GET /api/condition/{id}` reports progress.
//! Identical requests share one id, and finished images are served from the
//! image directory without regenerating.
//!
//! The map endpoints work without a backend; `POST /api/condition` then
//! answers 503.

mod queue;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hspace_core::backend::{load_backend, BackendConfig, DiffusionBackend, HVector};
use hspace_core::clustering::report::ClusterReport;
use hspace_core::clustering::ClusterMap;
use hspace_core::geometry::{GapDocument, RankingDocument};
use hspace_core::ids::sha256_hex;
use hspace_core::store::VectorArchive;
use hspace_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use queue::JobStatus;
use queue::{image_name, Job, Queue};

/// Startup options, mirroring the `serve` command flags.
#[derive(Debug, Clone, Default)]
pub struct ExplorerConfig {
    pub archive: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub backend_config: Option<PathBuf>,
    pub rankings: Option<PathBuf>,
    pub gaps: Option<PathBuf>,
    pub images: PathBuf,
    pub port: u16,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapPoint {
    pub prompt_id: String,
    pub x: f64,
    pub y: f64,
    pub label: i64,
    pub caption: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapCluster {
    pub id: i64,
    pub size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

struct LoadedMap {
    map: ClusterMap,
    captions: BTreeMap<String, String>,
    summaries: BTreeMap<i64, String>,
}

/// Everything a running explorer holds.
pub struct SessionState {
    map: Option<LoadedMap>,
    archive_id: Option<String>,
    map_id: Option<String>,
    rankings: Option<PathBuf>,
    gaps: Option<PathBuf>,
    images: PathBuf,
    queue: Option<Queue>,
}

impl SessionState {
    pub fn new(images: impl Into<PathBuf>) -> Result<Self> {
        let images = images.into();
        std::fs::create_dir_all(&images).map_err(|e| Error::Io {
            path: images.clone(),
            source: e,
        })?;
        Ok(Self {
            map: None,
            archive_id: None,
            map_id: None,
            rankings: None,
            gaps: None,
            images,
            queue: None,
        })
    }

    /// Attach a cluster map. Captions come from `archive` when given.
    pub fn with_map(mut self, map: ClusterMap, archive: Option<&VectorArchive>) -> Result<Self> {
        if let Some(a) = archive {
            if a.config_hash() != map.config_hash {
                return Err(Error::Validation(
                    "cluster map was built from a different archive config".into(),
                ));
            }
            self.archive_id = Some(a.config_hash().to_string());
        }
        let captions = map
            .labels
            .keys()
            .map(|id| {
                let caption = archive.and_then(|a| a.prompt(id)).map(|p| p.text.clone());
                (id.clone(), caption.unwrap_or_default())
            })
            .collect();
        let digest = serde_json::to_vec(&map)?;
        self.map_id = Some(sha256_hex(&digest)[..16].to_string());
        self.map = Some(LoadedMap {
            map,
            captions,
            summaries: BTreeMap::new(),
        });
        Ok(self)
    }

    pub fn with_report(mut self, report: &ClusterReport) -> Self {
        if let Some(loaded) = &mut self.map {
            loaded.summaries = report
                .clusters
                .iter()
                .filter_map(|c| c.summary.clone().map(|s| (c.id, s)))
                .collect();
        }
        self
    }

    pub fn with_backend(mut self, backend: Box<dyn DiffusionBackend>) -> Self {
        self.queue = Some(Queue::start(backend, self.images.clone()));
        self
    }

    pub fn with_rankings(mut self, path: impl Into<PathBuf>) -> Self {
        self.rankings = Some(path.into());
        self
    }

    pub fn with_gaps(mut self, path: impl Into<PathBuf>) -> Self {
        self.gaps = Some(path.into());
        self
    }

    pub fn from_config(config: &ExplorerConfig) -> Result<Self> {
        let mut state = Self::new(&config.images)?;
        let archive = config.archive.as_deref().map(VectorArchive::read).transpose()?;
        if let Some(path) = &config.map {
            state = state.with_map(ClusterMap::read(path)?, archive.as_ref())?;
        }
        if let Some(path) = &config.report {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let report: ClusterReport = serde_json::from_str(&text)?;
            state = state.with_report(&report);
        }
        if let Some(path) = &config.backend_config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let backend_config: BackendConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            state = state.with_backend(load_backend(&backend_config)?);
        }
        state.rankings = config.rankings.clone();
        state.gaps = config.gaps.clone();
        Ok(state)
    }
}

type Shared = Arc<SessionState>;

fn error(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    let body = json!({"error": {"kind": kind, "message": message.into()}});
    (status, Json(body)).into_response()
}

async fn get_status(State(state): State<Shared>) -> Json<Value> {
    Json(json!({
        "archive_id": state.archive_id,
        "map_id": state.map_id,
        "backend": if state.queue.is_some() { "loaded" } else { "absent" },
        "queue": state.queue.as_ref().map_or(0, Queue::pending),
    }))
}

async fn get_map(State(state): State<Shared>) -> Response {
    let Some(loaded) = &state.map else {
        return error(StatusCode::CONFLICT, "state", "no cluster map loaded");
    };
    let map = &loaded.map;
    let points: Vec<MapPoint> = map
        .coordinates
        .iter()
        .map(|(id, [x, y])| MapPoint {
            prompt_id: id.clone(),
            x: *x,
            y: *y,
            label: map.labels[id],
            caption: loaded.captions.get(id).cloned().unwrap_or_default(),
        })
        .collect();
    let clusters: Vec<MapCluster> = map
        .cluster_ids
        .iter()
        .map(|id| MapCluster {
            id: *id,
            size: map.rosters.get(id).map_or(0, Vec::len),
            summary: loaded.summaries.get(id).cloned(),
        })
        .collect();
    Json(json!({"points": points, "clusters": clusters, "params": map.params})).into_response()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionRequest {
    pub cluster_ids: Vec<i64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub prompt: String,
    pub seed: u64,
    pub scale: f32,
}

/// Hash over (sorted ids with their weights, prompt, seed, scale, backend
/// config hash).
pub fn request_hash(req: &ConditionRequest, config_hash: &str) -> String {
    let weights = req.weights.clone().unwrap_or_else(|| vec![1.0; req.cluster_ids.len()]);
    let mut pairs: Vec<(i64, f64)> = req.cluster_ids.iter().copied().zip(weights).collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let key = json!({
        "clusters": pairs,
        "prompt": req.prompt,
        "seed": req.seed,
        "scale": req.scale,
        "config_hash": config_hash,
    });
    sha256_hex(key.to_string().as_bytes())[..32].to_string()
}

fn status_body(id: &str, status: &JobStatus, ahead: usize, cached: bool) -> Value {
    let mut body = serde_json::to_value(status).expect("status serializes");
    body["request_id"] = json!(id);
    body["image_url"] = json!(format!("/images/{}", image_name(id)));
    body["cached"] = json!(cached);
    if *status == JobStatus::Queued {
        body["position"] = json!(ahead);
    }
    body
}

async fn post_condition(State(state): State<Shared>, body: Result<Json<ConditionRequest>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "input", e.body_text()),
    };
    let Some(loaded) = &state.map else {
        return error(StatusCode::CONFLICT, "state", "no cluster map loaded");
    };
    if req.cluster_ids.is_empty() {
        return error(StatusCode::BAD_REQUEST, "input", "cluster_ids is empty");
    }
    let mut averages: Vec<HVector> = Vec::with_capacity(req.cluster_ids.len());
    for id in &req.cluster_ids {
        match loaded.map.averages.get(id) {
            Some(h) => averages.push(h.clone()),
            None => return error(StatusCode::BAD_REQUEST, "input", format!("unknown cluster id {id}")),
        }
    }
    let weights = req.weights.clone().unwrap_or_else(|| vec![1.0; averages.len()]);
    if weights.len() != averages.len() {
        return error(
            StatusCode::BAD_REQUEST,
            "input",
            format!("{} weights for {} clusters", weights.len(), averages.len()),
        );
    }
    if weights.iter().any(|w| !w.is_finite()) || !req.scale.is_finite() {
        return error(StatusCode::BAD_REQUEST, "input", "weights and scale must be finite");
    }
    if req.prompt.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "input", "prompt is empty");
    }
    let Some(queue) = &state.queue else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "backend", "no backend loaded");
    };
    let id = request_hash(&req, queue.config_hash());
    if state.images.join(image_name(&id)).is_file() {
        queue.mark_done(&id);
        return (StatusCode::OK, Json(status_body(&id, &JobStatus::Done, 0, true))).into_response();
    }
    let (status, ahead) = queue.submit(Job {
        id: id.clone(),
        averages,
        weights,
        prompt: req.prompt,
        seed: req.seed,
        scale: req.scale,
    });
    let code = if status == JobStatus::Done { StatusCode::OK } else { StatusCode::ACCEPTED };
    (code, Json(status_body(&id, &status, ahead, false))).into_response()
}

async fn get_condition(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    let found = state.queue.as_ref().and_then(|q| q.status(&id));
    match found {
        Some((status, ahead)) => Json(status_body(&id, &status, ahead, false)).into_response(),
        None if valid_name(&id) && state.images.join(image_name(&id)).is_file() => {
            Json(status_body(&id, &JobStatus::Done, 0, true)).into_response()
        }
        None => error(StatusCode::NOT_FOUND, "input", format!("unknown request {id}")),
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

async fn get_image(State(state): State<Shared>, UrlPath(file): UrlPath<String>) -> Response {
    if !valid_name(&file) || !file.ends_with(".png") {
        return error(StatusCode::NOT_FOUND, "input", "no such image");
    }
    match std::fs::read(state.images.join(&file)) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "input", format!("no image {file}")),
    }
}

fn stored_report<T: serde::de::DeserializeOwned + Serialize>(path: Option<&Path>, what: &str) -> Response {
    let Some(path) = path else {
        return error(StatusCode::NOT_FOUND, "data", format!("no {what} report configured"));
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(_) => return error(StatusCode::NOT_FOUND, "data", format!("{what} report {} not found", path.display())),
    };
    match serde_json::from_str::<T>(&text) {
        Ok(doc) => Json(doc).into_response(),
        Err(e) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            "validation",
            format!("{what} report {} is malformed: {e}", path.display()),
        ),
    }
}

async fn get_rankings(State(state): State<Shared>) -> Response {
    stored_report::<RankingDocument>(state.rankings.as_deref(), "ranking")
}

async fn get_gaps(State(state): State<Shared>) -> Response {
    stored_report::<GapDocument>(state.gaps.as_deref(), "gap")
}

pub fn router(state: SessionState) -> Router {
    Router::new()
        .route("/api/status", get(get_status))
        .route("/api/map", get(get_map))
        .route("/api/condition", post(post_condition))
        .route("/api/condition/{id}", get(get_condition))
        .route("/api/rankings", get(get_rankings))
        .route("/api/gaps", get(get_gaps))
        .route("/images/{file}", get(get_image))
        .with_state(Arc::new(state))
}

/// Block serving `state` on `addr` until the process ends.
pub fn serve(state: SessionState, addr: SocketAddr) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Service(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Service(format!("bind {addr}: {e}")))?;
        log::info!("explorer listening on http://{}", listener.local_addr().map_err(|e| Error::Service(e.to_string()))?);
        axum::serve(listener, router(state))
            .await
            .map_err(|e| Error::Service(format!("server: {e}")))
    })
}

/// Serve `state` from a background thread; returns the bound address.
pub fn spawn(state: SessionState, addr: SocketAddr) -> Result<SocketAddr> {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::Builder::new()
        .name("explorer".into())
        .spawn(move || {
            let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = tx.send(Err(Error::Service(format!("runtime: {e}"))));
                    return;
                }
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind(addr).await {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = tx.send(Err(Error::Service(format!("bind {addr}: {e}"))));
                        return;
                    }
                };
                let _ = tx.send(listener.local_addr().map_err(|e| Error::Service(e.to_string())));
                if let Err(e) = axum::serve(listener, router(state)).await {
                    log::error!("explorer stopped: {e}");
                }
            });
        })
        .map_err(|e| Error::Service(format!("spawn: {e}")))?;
    rx.recv().map_err(|_| Error::Service("explorer thread exited".into()))?
}
