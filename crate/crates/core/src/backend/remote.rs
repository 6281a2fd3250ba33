//! Client for an out-of-process model server.
//!
//! The server owns the real pretrained weights and exposes two JSON
//! endpoints:
//!
//! - `POST /v1/load` with `{"config": BackendConfig}` answers
//!   `{"bottleneck_shape": [c, h, w]}`.
//! - `POST /v1/run` with `{"prompt", "seed", "injection": null | {"values", "scale"}}`
//!   answers `{"captured": [f32], "image_png": base64}`.
//!
//! Failures answer a non-2xx status with `{"error": {"kind", "message"}}`,
//! where `kind` is `load` or `config` for load failures.
//! The server URL comes from `HSPACE_REMOTE_URL`.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{decode_png, BackendConfig, DiffusionBackend, Injection, RunOutput, Shape};
use crate::error::{Error, Result};

pub const NAME: &str = "remote";
pub const URL_ENV: &str = "HSPACE_REMOTE_URL";
const DEFAULT_URL: &str = "http://127.0.0.1:7860";

#[derive(Serialize)]
struct LoadRequest<'a> {
    config: &'a BackendConfig,
}

#[derive(Deserialize)]
struct LoadResponse {
    bottleneck_shape: Shape,
}

#[derive(Serialize)]
struct RunInjection<'a> {
    values: &'a [f32],
    scale: f32,
}

#[derive(Serialize)]
struct RunRequest<'a> {
    prompt: &'a str,
    seed: u64,
    injection: Option<RunInjection<'a>>,
}

#[derive(Deserialize)]
struct RunResponse {
    captured: Vec<f32>,
    image_png: String,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Deserialize)]
struct ErrorDetail {
    kind: String,
    message: String,
}

pub struct RemoteBackend {
    config: BackendConfig,
    url: String,
    client: reqwest::blocking::Client,
    shape: Shape,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("url", &self.url)
            .field("shape", &self.shape)
            .finish()
    }
}

fn server_error(response: reqwest::blocking::Response) -> (String, String) {
    let status = response.status();
    let text = response.text().unwrap_or_default();
    match serde_json::from_str::<ErrorBody>(&text) {
        Ok(body) => (body.error.kind, body.error.message),
        Err(_) => ("backend".into(), format!("HTTP {status}: {text}")),
    }
}

impl RemoteBackend {
    pub fn load(config: &BackendConfig) -> Result<Self> {
        let url = std::env::var(URL_ENV).unwrap_or_else(|_| DEFAULT_URL.to_string());
        Self::connect(&url, config)
    }

    pub fn connect(url: &str, config: &BackendConfig) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| Error::Load(format!("http client: {e}")))?;
        let url = url.trim_end_matches('/').to_string();
        let response = client
            .post(format!("{url}/v1/load"))
            .json(&LoadRequest { config })
            .send()
            .map_err(|e| Error::Load(format!("model server {url} unreachable: {e}")))?;
        if !response.status().is_success() {
            let (kind, message) = server_error(response);
            return Err(match kind.as_str() {
                "config" => Error::Config(message),
                _ => Error::Load(message),
            });
        }
        let body: LoadResponse = response
            .json()
            .map_err(|e| Error::Load(format!("bad load response: {e}")))?;
        Ok(Self {
            config: config.clone(),
            url,
            client,
            shape: body.bottleneck_shape,
        })
    }
}

impl DiffusionBackend for RemoteBackend {
    fn name(&self) -> &str {
        NAME
    }

    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn bottleneck_shape(&self) -> Shape {
        self.shape
    }

    fn run(
        &mut self,
        prompt: &str,
        seed: u64,
        injection: Option<Injection<'_>>,
    ) -> Result<RunOutput> {
        let request = RunRequest {
            prompt,
            seed,
            injection: injection.map(|i| RunInjection {
                values: i.values,
                scale: i.scale,
            }),
        };
        let response = self
            .client
            .post(format!("{}/v1/run", self.url))
            .json(&request)
            .send()
            .map_err(|e| Error::Backend(format!("model server: {e}")))?;
        if !response.status().is_success() {
            let (_, message) = server_error(response);
            return Err(Error::Backend(message));
        }
        let body: RunResponse = response
            .json()
            .map_err(|e| Error::Backend(format!("bad run response: {e}")))?;
        if body.captured.len() != self.shape.len() {
            return Err(Error::Backend(format!(
                "server captured {} values, bottleneck shape {} needs {}",
                body.captured.len(),
                self.shape,
                self.shape.len()
            )));
        }
        let png = base64::engine::general_purpose::STANDARD
            .decode(body.image_png.as_bytes())
            .map_err(|e| Error::Backend(format!("image is not base64: {e}")))?;
        let image = decode_png(&png).map_err(|e| Error::Backend(e.to_string()))?;
        Ok(RunOutput {
            captured: body.captured,
            image,
        })
    }
}
