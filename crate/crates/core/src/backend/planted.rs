//! Backend whose h-vectors are sums of known directions.
//!
//! `h(prompt, seed) = base(seed) + sum_w weight(w) * dir(w) + sum_i weight_i * dir(i)`
//! where `w` ranges over the distinct lowercase words of the prompt and `i`
//! over interactions whose words all occur. `base` and `dir` are Gaussian
//! draws keyed by the seed and the word, directions scaled to unit RMS.
//! The model identifier is a path to a JSON [`PlantedModel`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BackendConfig, DiffusionBackend, Injection, RunOutput, Shape};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

pub const NAME: &str = "planted";
pub const ADAPTER: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub terms: Vec<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedModel {
    pub shape: Shape,
    #[serde(default = "one")]
    pub base_scale: f64,
    #[serde(default)]
    pub default_weight: f64,
    #[serde(default)]
    pub terms: BTreeMap<String, f64>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
}

fn one() -> f64 {
    1.0
}

impl PlantedModel {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Load(format!("planted model '{}': {e}", path.display())))?;
        let model: PlantedModel = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("model: '{}' is not a planted model: {e}", path.display())))?;
        if model.shape.is_empty() {
            return Err(Error::Config("model: planted shape is empty".into()));
        }
        Ok(model)
    }

    /// Words of a prompt as the model sees them.
    pub fn words(prompt: &str) -> BTreeSet<String> {
        prompt
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn base(&self, seed: u64) -> Vec<f64> {
        let mut rng = keyed_rng(&[b"planted-base", &seed.to_le_bytes()]);
        (0..self.shape.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal) * self.base_scale)
            .collect()
    }

    /// Unit-RMS direction attached to `key`.
    pub fn direction(&self, key: &str) -> Vec<f64> {
        let mut rng = keyed_rng(&[b"planted-dir", key.as_bytes()]);
        let raw: Vec<f64> = (0..self.shape.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let rms = (raw.iter().map(|v| v * v).sum::<f64>() / raw.len() as f64).sqrt();
        raw.into_iter().map(|v| v / rms).collect()
    }

    pub fn h(&self, prompt: &str, seed: u64) -> Vec<f64> {
        let mut h = self.base(seed);
        let words = Self::words(prompt);
        for word in &words {
            let weight = self.terms.get(word).copied().unwrap_or(self.default_weight);
            if weight != 0.0 {
                for (v, d) in h.iter_mut().zip(self.direction(word)) {
                    *v += weight * d;
                }
            }
        }
        for interaction in &self.interactions {
            if interaction.terms.iter().all(|t| words.contains(&t.to_lowercase())) {
                let key = interaction.terms.join("+").to_lowercase();
                for (v, d) in h.iter_mut().zip(self.direction(&key)) {
                    *v += interaction.weight * d;
                }
            }
        }
        h
    }
}

#[derive(Debug)]
pub struct PlantedBackend {
    config: BackendConfig,
    model: PlantedModel,
}

impl PlantedBackend {
    pub fn load(config: &BackendConfig) -> Result<Self> {
        config.validate()?;
        if config.adapter != ADAPTER {
            return Err(Error::Config(format!(
                "adapter: planted backend takes adapter '{ADAPTER}', got '{}'",
                config.adapter
            )));
        }
        let model = PlantedModel::read(Path::new(&config.model))?;
        Ok(Self {
            config: config.clone(),
            model,
        })
    }

    pub fn from_model(config: &BackendConfig, model: PlantedModel) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            model,
        })
    }

    pub fn model(&self) -> &PlantedModel {
        &self.model
    }

    fn render(&self, h: &[f32]) -> RgbImage {
        let size = self.config.image_size;
        let shape = self.model.shape;
        let plane = shape.height * shape.width;
        RgbImage::from_fn(size, size, |x, y| {
            let py = y as usize * shape.height / size as usize;
            let px = x as usize * shape.width / size as usize;
            let pos = py * shape.width + px;
            let mut rgb = [0u8; 3];
            for (k, out) in rgb.iter_mut().enumerate() {
                let (mut sum, mut n) = (0.0f32, 0);
                for ch in (k..shape.channels).step_by(3) {
                    sum += h[ch * plane + pos];
                    n += 1;
                }
                let v = if n == 0 { 0.0 } else { sum / n as f32 };
                *out = (127.5 * (1.0 + v.tanh())).round().clamp(0.0, 255.0) as u8;
            }
            Rgb(rgb)
        })
    }
}

impl DiffusionBackend for PlantedBackend {
    fn name(&self) -> &str {
        NAME
    }

    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn bottleneck_shape(&self) -> Shape {
        self.model.shape
    }

    fn run(
        &mut self,
        prompt: &str,
        seed: u64,
        injection: Option<Injection<'_>>,
    ) -> Result<RunOutput> {
        let captured: Vec<f32> = self.model.h(prompt, seed).into_iter().map(|v| v as f32).collect();
        let mut shifted = captured.clone();
        if let Some(inj) = injection {
            for (v, &o) in shifted.iter_mut().zip(inj.values) {
                *v += inj.scale * o;
            }
        }
        Ok(RunOutput {
            image: self.render(&shifted),
            captured,
        })
    }
}
