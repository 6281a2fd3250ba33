//! Diffusion backends: prompt to image generation with h-space capture at
//! the U-Net bottleneck and h-space offset injection.
//!
//! Every backend implements [`DiffusionBackend`] and is created through a
//! [`BackendRegistry`] keyed by the `backend` field of [`BackendConfig`].
//! Builtin strategies:
//!
//! - `toy-lcm`: a small self-contained latent diffusion network driven by a
//!   latent-consistency scheduler. Deterministic on every platform.
//! - `planted`: h-vectors assembled from known directions, so analyses can be
//!   checked against closed-form answers.
//! - `remote`: forwards to a model server speaking the JSON protocol in
//!   [`remote`], for running real pretrained weights.

mod config;
mod hvector;
mod image;
pub mod planted;
pub mod remote;
pub mod toy;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use self::config::{BackendConfig, MAX_INFERENCE_STEPS};
pub use self::hvector::{HVector, Shape};
pub use self::image::{decode_png, encode_png, read_png, GeneratedImage, OffsetDescriptor};

use ::image::RgbImage;

use crate::error::{Error, Result};
use crate::ids::caption_id;

/// An additive bottleneck offset, applied as `scale * values`.
#[derive(Debug, Clone, Copy)]
pub struct Injection<'a> {
    pub values: &'a [f32],
    pub scale: f32,
}

/// Output of one full generation.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Bottleneck output at the configured capture step, before injection.
    pub captured: Vec<f32>,
    pub image: RgbImage,
}

/// A loaded model handle.
///
/// Handles are single-job: `&mut self` keeps a handle from running two
/// generations at once. They are `Send` so they can move to a worker thread.
pub trait DiffusionBackend: Send {
    /// Registered strategy name.
    fn name(&self) -> &str;

    fn config(&self) -> &BackendConfig;

    /// Shape of the bottleneck output for the configured image size.
    fn bottleneck_shape(&self) -> Shape;

    /// Run the full sampler. When `injection` is set it is added to the
    /// bottleneck output at every denoising step.
    fn run(&mut self, prompt: &str, seed: u64, injection: Option<Injection<'_>>)
        -> Result<RunOutput>;

    fn config_hash(&self) -> String {
        self.config().hash()
    }

    /// Capture the h-vector for `prompt` under `seed`, plus the plain image.
    fn sample_h(&mut self, prompt: &str, seed: u64) -> Result<(HVector, GeneratedImage)> {
        check_prompt(prompt)?;
        let shape = self.bottleneck_shape();
        let out = self.run(prompt, seed, None)?;
        let config = self.config();
        check_image(&out.image, config)?;
        let prompt_id = caption_id(prompt);
        let h = HVector::new(
            out.captured,
            shape,
            prompt_id.clone(),
            seed,
            config.capture_step,
            config.hash(),
        )
        .map_err(|e| Error::Backend(format!("capture hook produced an invalid tensor: {e}")))?;
        let image = GeneratedImage {
            pixels: out.image,
            prompt_id,
            seed,
            offset: None,
        };
        Ok((h, image))
    }

    /// Generate with `scale * offset` added to the bottleneck at every step.
    fn generate_with_offset(
        &mut self,
        prompt: &str,
        seed: u64,
        offset: &HVector,
        scale: f32,
    ) -> Result<GeneratedImage> {
        check_prompt(prompt)?;
        let shape = self.bottleneck_shape();
        if offset.shape() != shape {
            return Err(Error::Input(format!(
                "offset shape {} does not match bottleneck shape {shape}",
                offset.shape()
            )));
        }
        if !scale.is_finite() {
            return Err(Error::Input(format!("scale {scale} is not finite")));
        }
        let out = self.run(
            prompt,
            seed,
            Some(Injection {
                values: offset.values(),
                scale,
            }),
        )?;
        check_image(&out.image, self.config())?;
        Ok(GeneratedImage {
            pixels: out.image,
            prompt_id: caption_id(prompt),
            seed,
            offset: Some(OffsetDescriptor {
                label: offset.prompt_id.clone(),
                scale,
            }),
        })
    }
}

fn check_prompt(prompt: &str) -> Result<()> {
    if prompt.trim().is_empty() {
        return Err(Error::Input("prompt is empty".into()));
    }
    Ok(())
}

fn check_image(image: &RgbImage, config: &BackendConfig) -> Result<()> {
    if image.width() != config.image_size || image.height() != config.image_size {
        return Err(Error::Backend(format!(
            "backend returned a {}x{} image, config asks for {}",
            image.width(),
            image.height(),
            config.image_size
        )));
    }
    Ok(())
}

pub type BackendFactory =
    Arc<dyn Fn(&BackendConfig) -> Result<Box<dyn DiffusionBackend>> + Send + Sync>;

/// Name to factory map for backend strategies.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut registry = Self::empty();
        registry.register(toy::NAME, |config| {
            Ok(Box::new(toy::ToyLcmBackend::load(config)?) as Box<dyn DiffusionBackend>)
        });
        registry.register(planted::NAME, |config| {
            Ok(Box::new(planted::PlantedBackend::load(config)?) as Box<dyn DiffusionBackend>)
        });
        registry.register(remote::NAME, |config| {
            Ok(Box::new(remote::RemoteBackend::load(config)?) as Box<dyn DiffusionBackend>)
        });
        registry
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&BackendConfig) -> Result<Box<dyn DiffusionBackend>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Arc::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn load(&self, config: &BackendConfig) -> Result<Box<dyn DiffusionBackend>> {
        config.validate()?;
        let factory = self.factories.get(&config.backend).ok_or_else(|| {
            Error::Config(format!(
                "backend: unknown backend '{}' (registered: {})",
                config.backend,
                self.names().join(", ")
            ))
        })?;
        factory(config)
    }
}

/// Load a backend through the builtin registry.
pub fn load_backend(config: &BackendConfig) -> Result<Box<dyn DiffusionBackend>> {
    BackendRegistry::with_builtins().load(config)
}
