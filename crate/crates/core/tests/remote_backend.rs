mod common;

use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine;
use hspace_core::backend::remote::RemoteBackend;
use hspace_core::backend::toy::ToyLcmBackend;
use hspace_core::backend::{encode_png, BackendConfig, DiffusionBackend, Injection};
use hspace_core::Error;
use serde_json::{json, Value};

type Shared = Arc<Mutex<Option<ToyLcmBackend>>>;

fn fail(status: StatusCode, kind: &str, message: String) -> (StatusCode, Json<Value>) {
    (status, Json(json!({"error": {"kind": kind, "message": message}})))
}

async fn load(State(state): State<Shared>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let config: BackendConfig = match serde_json::from_value(body["config"].clone()) {
        Ok(c) => c,
        Err(e) => return fail(StatusCode::BAD_REQUEST, "config", e.to_string()),
    };
    let mut local = config.clone();
    local.backend = "toy-lcm".into();
    match ToyLcmBackend::load(&local) {
        Ok(backend) => {
            let shape = backend.bottleneck_shape();
            *state.lock().unwrap() = Some(backend);
            (StatusCode::OK, Json(json!({"bottleneck_shape": shape})))
        }
        Err(Error::Config(m)) => fail(StatusCode::BAD_REQUEST, "config", m),
        Err(e) => fail(StatusCode::NOT_FOUND, "load", e.to_string()),
    }
}

async fn run(State(state): State<Shared>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let mut guard = state.lock().unwrap();
    let Some(backend) = guard.as_mut() else {
        return fail(StatusCode::CONFLICT, "backend", "nothing loaded".into());
    };
    let prompt = body["prompt"].as_str().unwrap_or_default().to_string();
    let seed = body["seed"].as_u64().unwrap();
    let values: Option<Vec<f32>> = body["injection"]["values"]
        .as_array()
        .map(|a| a.iter().map(|v| v.as_f64().unwrap() as f32).collect());
    let scale = body["injection"]["scale"].as_f64().unwrap_or(0.0) as f32;
    let injection = values.as_deref().map(|values| Injection { values, scale });
    match backend.run(&prompt, seed, injection) {
        Ok(out) => {
            let png = encode_png(&out.image).unwrap();
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            (StatusCode::OK, Json(json!({"captured": out.captured, "image_png": b64})))
        }
        Err(e) => fail(StatusCode::INTERNAL_SERVER_ERROR, "backend", e.to_string()),
    }
}

fn server() -> String {
    let state: Shared = Arc::new(Mutex::new(None));
    common::serve(
        Router::new()
            .route("/v1/load", post(load))
            .route("/v1/run", post(run))
            .with_state(state),
    )
}

fn remote_config() -> BackendConfig {
    BackendConfig {
        backend: "remote".into(),
        image_size: 128,
        ..BackendConfig::default()
    }
}

#[test]
fn remote_matches_local_model() {
    let url = server();
    let config = remote_config();
    let mut remote = RemoteBackend::connect(&url, &config).unwrap();
    let mut local_config = config.clone();
    local_config.backend = "toy-lcm".into();
    let mut local = ToyLcmBackend::load(&local_config).unwrap();
    assert_eq!(remote.bottleneck_shape(), local.bottleneck_shape());

    let (h_remote, img_remote) = remote.sample_h("a photo of a pie", 3).unwrap();
    let (h_local, img_local) = local.sample_h("a photo of a pie", 3).unwrap();
    assert_eq!(h_remote.values(), h_local.values());
    assert_eq!(img_remote.pixels, img_local.pixels);

    let offset = h_local.clone();
    let a = remote.generate_with_offset("a photo of food", 1, &offset, 0.7).unwrap();
    let b = local.generate_with_offset("a photo of food", 1, &offset, 0.7).unwrap();
    assert_eq!(a.pixels, b.pixels);
}

#[test]
fn remote_load_errors_map_to_kinds() {
    let url = server();
    let mut config = remote_config();
    config.model = "toy/missing".into();
    assert!(matches!(RemoteBackend::connect(&url, &config), Err(Error::Load(_))));
    let mut config = remote_config();
    config.adapter = "toy/lcm-lora-base".into();
    assert!(matches!(RemoteBackend::connect(&url, &config), Err(Error::Config(_))));
}

#[test]
fn unreachable_server_is_load_error() {
    let err = RemoteBackend::connect("http://127.0.0.1:9", &remote_config()).unwrap_err();
    assert!(matches!(err, Error::Load(_)), "{err}");
}
