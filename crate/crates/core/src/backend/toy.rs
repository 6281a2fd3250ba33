//! A miniature latent diffusion model with a latent-consistency sampler.
//!
//! The network keeps the architecture points the analyses care about: a
//! latent (4 channels, 1/8 image resolution), a down path into a bottleneck
//! at 1/64 image resolution, a mid block whose output is the h-space, and an
//! up path back to a noise prediction. Weights are generated from the model
//! identifier, and the consistency adapter adds a low-rank update to the mid
//! block, so two loads of one config are bit-identical.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{BackendConfig, DiffusionBackend, Injection, RunOutput, Shape};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, seed_rng};

pub const NAME: &str = "toy-lcm";

const LATENT_CHANNELS: usize = 4;
const TEXT_DIM: usize = 64;
const VAE_FACTOR: usize = 8;
const DOWN_FACTOR: usize = 8;
const TRAIN_TIMESTEPS: usize = 1000;
const ORIGIN_STEPS: usize = 50;
const BETA_START: f64 = 0.000_85;
const BETA_END: f64 = 0.012;
const SIGMA_DATA: f64 = 0.5;
const TIMESTEP_SCALING: f64 = 10.0;

struct ModelSpec {
    name: &'static str,
    mid_channels: usize,
}

struct AdapterSpec {
    name: &'static str,
    base: &'static str,
    rank: usize,
    alpha: f32,
}

const MODELS: &[ModelSpec] = &[
    ModelSpec {
        name: "toy/ldm-mini",
        mid_channels: 64,
    },
    ModelSpec {
        name: "toy/ldm-base",
        mid_channels: 128,
    },
];

const ADAPTERS: &[AdapterSpec] = &[
    AdapterSpec {
        name: "toy/lcm-lora-mini",
        base: "toy/ldm-mini",
        rank: 4,
        alpha: 0.5,
    },
    AdapterSpec {
        name: "toy/lcm-lora-base",
        base: "toy/ldm-base",
        rank: 8,
        alpha: 0.5,
    },
];

/// Names of the builtin toy weights.
pub fn model_names() -> impl Iterator<Item = &'static str> {
    MODELS.iter().map(|m| m.name)
}

struct Weights {
    channels: usize,
    w_in: Vec<f32>,
    b_in: Vec<f32>,
    w_txt: Vec<f32>,
    w_mid: Vec<f32>,
    w_ctx: Vec<f32>,
    w_out: Vec<f32>,
    w_skip: Vec<f32>,
    w_decode: Vec<f32>,
}

fn gaussian(rng: &mut impl Rng, n: usize, std: f32) -> Vec<f32> {
    (0..n)
        .map(|_| rng.sample::<f32, _>(StandardNormal) * std)
        .collect()
}

impl Weights {
    fn generate(model: &ModelSpec, adapter: &AdapterSpec) -> Self {
        let c = model.mid_channels;
        let mut rng = keyed_rng(&[b"toy-weights", model.name.as_bytes()]);
        let w_in = gaussian(&mut rng, c * LATENT_CHANNELS, 1.0 / (LATENT_CHANNELS as f32).sqrt());
        let b_in = gaussian(&mut rng, c, 0.1);
        let w_txt = gaussian(&mut rng, c * TEXT_DIM, 1.0);
        let mut w_mid = gaussian(&mut rng, c * c, 1.0 / (c as f32).sqrt());
        let w_ctx = gaussian(&mut rng, c * c, 0.5 / (c as f32).sqrt());
        let w_out = gaussian(&mut rng, LATENT_CHANNELS * c, 0.5 / (c as f32).sqrt());
        let w_skip = gaussian(&mut rng, LATENT_CHANNELS * LATENT_CHANNELS, 0.1);
        let w_decode = gaussian(&mut rng, 3 * LATENT_CHANNELS, 0.8);

        let mut lora = keyed_rng(&[b"toy-lora", adapter.name.as_bytes()]);
        let down = gaussian(&mut lora, adapter.rank * c, 1.0 / (c as f32).sqrt());
        let up = gaussian(&mut lora, c * adapter.rank, 1.0 / (adapter.rank as f32).sqrt());
        let scale = adapter.alpha / adapter.rank as f32;
        for i in 0..c {
            for j in 0..c {
                let delta: f32 = (0..adapter.rank)
                    .map(|r| up[i * adapter.rank + r] * down[r * c + j])
                    .sum();
                w_mid[i * c + j] += scale * delta;
            }
        }

        Self {
            channels: c,
            w_in,
            b_in,
            w_txt,
            w_mid,
            w_ctx,
            w_out,
            w_skip,
            w_decode,
        }
    }
}

/// Latent-consistency schedule: a few timesteps taken from an evenly skipped
/// grid of the training schedule, with boundary-condition scalings.
struct Schedule {
    timesteps: Vec<usize>,
    alphas_cumprod: Vec<f64>,
}

impl Schedule {
    fn new(steps: usize) -> Self {
        let (s0, s1) = (BETA_START.sqrt(), BETA_END.sqrt());
        let mut alphas_cumprod = Vec::with_capacity(TRAIN_TIMESTEPS);
        let mut acc = 1.0;
        for i in 0..TRAIN_TIMESTEPS {
            let b = s0 + (s1 - s0) * i as f64 / (TRAIN_TIMESTEPS - 1) as f64;
            acc *= 1.0 - b * b;
            alphas_cumprod.push(acc);
        }
        let ratio = TRAIN_TIMESTEPS / ORIGIN_STEPS;
        let origin: Vec<usize> = (1..=ORIGIN_STEPS).rev().map(|i| i * ratio - 1).collect();
        let skip = ORIGIN_STEPS / steps;
        let timesteps = origin.iter().step_by(skip).take(steps).copied().collect();
        Self {
            timesteps,
            alphas_cumprod,
        }
    }

    fn boundary_scalings(t: usize) -> (f64, f64) {
        let scaled = t as f64 * TIMESTEP_SCALING;
        let c_skip = SIGMA_DATA * SIGMA_DATA / (scaled * scaled + SIGMA_DATA * SIGMA_DATA);
        let c_out = scaled / (scaled * scaled + SIGMA_DATA * SIGMA_DATA).sqrt();
        (c_skip, c_out)
    }
}

pub struct ToyLcmBackend {
    config: BackendConfig,
    weights: Weights,
    schedule: Schedule,
    latent_res: usize,
    mid_res: usize,
}

impl std::fmt::Debug for ToyLcmBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyLcmBackend")
            .field("config", &self.config)
            .field("mid_channels", &self.weights.channels)
            .finish()
    }
}

impl ToyLcmBackend {
    pub fn load(config: &BackendConfig) -> Result<Self> {
        config.validate()?;
        let model = MODELS
            .iter()
            .find(|m| m.name == config.model)
            .ok_or_else(|| Error::Load(format!("model weights '{}' not found", config.model)))?;
        let adapter = ADAPTERS
            .iter()
            .find(|a| a.name == config.adapter)
            .ok_or_else(|| Error::Load(format!("adapter '{}' not found", config.adapter)))?;
        if adapter.base != model.name {
            return Err(Error::Config(format!(
                "adapter: '{}' targets '{}', not '{}'",
                adapter.name, adapter.base, model.name
            )));
        }
        if config.dtype != "f32" {
            return Err(Error::Config(format!(
                "dtype: '{}' unsupported, toy weights are f32",
                config.dtype
            )));
        }
        let size = config.image_size as usize;
        if !size.is_multiple_of(VAE_FACTOR * DOWN_FACTOR) {
            return Err(Error::Config(format!(
                "image_size: {size} must be a multiple of {}",
                VAE_FACTOR * DOWN_FACTOR
            )));
        }
        let latent_res = size / VAE_FACTOR;
        Ok(Self {
            config: config.clone(),
            weights: Weights::generate(model, adapter),
            schedule: Schedule::new(config.num_inference_steps as usize),
            latent_res,
            mid_res: latent_res / DOWN_FACTOR,
        })
    }

    /// Timesteps the sampler visits, first step first.
    pub fn timesteps(&self) -> &[usize] {
        &self.schedule.timesteps
    }

    fn encode_prompt(&self, prompt: &str) -> Vec<f32> {
        let lower = prompt.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push(lower.trim());
        }
        let mut cond = vec![0.0f32; TEXT_DIM];
        for token in &tokens {
            let mut rng = keyed_rng(&[b"toy-text", self.config.model.as_bytes(), token.as_bytes()]);
            for v in cond.iter_mut() {
                *v += rng.sample::<f32, _>(StandardNormal);
            }
        }
        let n = tokens.len() as f32;
        cond.iter_mut().for_each(|v| *v /= n);
        cond
    }

    /// One U-Net evaluation. Returns the noise prediction and the raw
    /// bottleneck output (before injection).
    fn unet(
        &self,
        latent: &[f32],
        t: usize,
        cond: &[f32],
        injection: Option<Injection<'_>>,
    ) -> (Vec<f32>, Vec<f32>) {
        let w = &self.weights;
        let c = w.channels;
        let (lr, mr) = (self.latent_res, self.mid_res);
        let positions = mr * mr;

        let mut pooled = vec![0.0f32; LATENT_CHANNELS * positions];
        let norm = 1.0 / (DOWN_FACTOR * DOWN_FACTOR) as f32;
        for ch in 0..LATENT_CHANNELS {
            for y in 0..lr {
                for x in 0..lr {
                    let pos = (y / DOWN_FACTOR) * mr + x / DOWN_FACTOR;
                    pooled[ch * positions + pos] += latent[(ch * lr + y) * lr + x] * norm;
                }
            }
        }

        let half = c / 2;
        let temb: Vec<f32> = (0..c)
            .map(|k| {
                let freq = (-(10_000f64.ln()) * (k % half) as f64 / half as f64).exp();
                let arg = t as f64 * freq;
                0.5 * if k < half { arg.sin() } else { arg.cos() } as f32
            })
            .collect();
        let txt: Vec<f32> = (0..c)
            .map(|i| (0..TEXT_DIM).map(|e| w.w_txt[i * TEXT_DIM + e] * cond[e]).sum())
            .collect();

        let mut hidden = vec![0.0f32; c * positions];
        for i in 0..c {
            let bias = w.b_in[i] + temb[i] + txt[i];
            for pos in 0..positions {
                let pre: f32 = (0..LATENT_CHANNELS)
                    .map(|k| w.w_in[i * LATENT_CHANNELS + k] * pooled[k * positions + pos])
                    .sum::<f32>()
                    + bias;
                hidden[i * positions + pos] = pre / (1.0 + (-pre).exp());
            }
        }

        let ctx: Vec<f32> = (0..c)
            .map(|i| hidden[i * positions..(i + 1) * positions].iter().sum::<f32>() / positions as f32)
            .collect();
        let gate: Vec<f32> = (0..c)
            .map(|i| (0..c).map(|j| w.w_ctx[i * c + j] * ctx[j]).sum())
            .collect();

        let mut mid = vec![0.0f32; c * positions];
        for i in 0..c {
            for pos in 0..positions {
                let pre: f32 = (0..c)
                    .map(|j| w.w_mid[i * c + j] * hidden[j * positions + pos])
                    .sum::<f32>()
                    + gate[i];
                mid[i * positions + pos] = hidden[i * positions + pos] + pre.tanh();
            }
        }
        let captured = mid.clone();
        if let Some(inj) = injection {
            for (m, &o) in mid.iter_mut().zip(inj.values) {
                *m += inj.scale * o;
            }
        }

        let mut up = vec![0.0f32; LATENT_CHANNELS * positions];
        for k in 0..LATENT_CHANNELS {
            for pos in 0..positions {
                up[k * positions + pos] = (0..c)
                    .map(|i| w.w_out[k * c + i] * mid[i * positions + pos])
                    .sum();
            }
        }
        let mut eps = vec![0.0f32; latent.len()];
        for k in 0..LATENT_CHANNELS {
            for y in 0..lr {
                for x in 0..lr {
                    let pos = (y / DOWN_FACTOR) * mr + x / DOWN_FACTOR;
                    let skip: f32 = (0..LATENT_CHANNELS)
                        .map(|m| w.w_skip[k * LATENT_CHANNELS + m] * latent[(m * lr + y) * lr + x])
                        .sum();
                    eps[(k * lr + y) * lr + x] = up[k * positions + pos] + skip;
                }
            }
        }
        (eps, captured)
    }

    fn decode(&self, latent: &[f32]) -> RgbImage {
        let size = self.config.image_size;
        let lr = self.latent_res;
        let w = &self.weights.w_decode;
        RgbImage::from_fn(size, size, |x, y| {
            let (ly, lx) = (y as usize / VAE_FACTOR, x as usize / VAE_FACTOR);
            let mut rgb = [0u8; 3];
            for (ch, out) in rgb.iter_mut().enumerate() {
                let v: f32 = (0..LATENT_CHANNELS)
                    .map(|m| w[ch * LATENT_CHANNELS + m] * latent[(m * lr + ly) * lr + lx])
                    .sum();
                *out = (127.5 * (1.0 + v.tanh())).round().clamp(0.0, 255.0) as u8;
            }
            Rgb(rgb)
        })
    }
}

impl DiffusionBackend for ToyLcmBackend {
    fn name(&self) -> &str {
        NAME
    }

    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn bottleneck_shape(&self) -> Shape {
        Shape::new(self.weights.channels, self.mid_res, self.mid_res)
    }

    fn run(
        &mut self,
        prompt: &str,
        seed: u64,
        injection: Option<Injection<'_>>,
    ) -> Result<RunOutput> {
        let cond = self.encode_prompt(prompt);
        let uncond = vec![0.0f32; TEXT_DIM];
        let guidance = self.config.guidance_scale;
        let use_cfg = guidance > 1.0;
        let capture_step = self.config.capture_step as usize;

        let mut rng = seed_rng(seed);
        let n = LATENT_CHANNELS * self.latent_res * self.latent_res;
        let mut latent = gaussian(&mut rng, n, 1.0);
        let mut denoised = latent.clone();
        let mut captured = None;
        let timesteps = self.schedule.timesteps.clone();

        for (step, &t) in timesteps.iter().enumerate() {
            // Conditional branch carries both the capture and the injection.
            let (eps_cond, mid) = self.unet(&latent, t, &cond, injection);
            if step == capture_step {
                captured = Some(mid);
            }
            let eps = if use_cfg {
                let (eps_uncond, _) = self.unet(&latent, t, &uncond, None);
                eps_uncond
                    .iter()
                    .zip(&eps_cond)
                    .map(|(u, c)| u + guidance * (c - u))
                    .collect()
            } else {
                eps_cond
            };

            let alpha = self.schedule.alphas_cumprod[t];
            let (sqrt_a, sqrt_b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
            let (c_skip, c_out) = Schedule::boundary_scalings(t);
            for ((d, &z), &e) in denoised.iter_mut().zip(&latent).zip(&eps) {
                let x0 = (f64::from(z) - sqrt_b * f64::from(e)) / sqrt_a;
                *d = (c_out * x0 + c_skip * f64::from(z)) as f32;
            }
            if let Some(&next) = timesteps.get(step + 1) {
                let prev = self.schedule.alphas_cumprod[next];
                let (sa, sb) = (prev.sqrt(), (1.0 - prev).sqrt());
                for (z, &d) in latent.iter_mut().zip(&denoised) {
                    let noise: f64 = rng.sample(StandardNormal);
                    *z = (sa * f64::from(d) + sb * noise) as f32;
                }
            }
        }

        let captured = captured
            .ok_or_else(|| Error::Backend(format!("capture step {capture_step} never ran")))?;
        Ok(RunOutput {
            captured,
            image: self.decode(&denoised),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> BackendConfig {
        BackendConfig {
            image_size: 128,
            ..Default::default()
        }
    }

    #[test]
    fn lcm_timesteps_for_four_steps() {
        assert_eq!(Schedule::new(4).timesteps, vec![999, 759, 519, 279]);
        assert_eq!(Schedule::new(1).timesteps, vec![999]);
        assert_eq!(Schedule::new(50).timesteps.len(), 50);
    }

    #[test]
    fn boundary_condition_near_zero() {
        let (skip, out) = Schedule::boundary_scalings(0);
        assert_eq!((skip, out), (1.0, 0.0));
        let (skip, out) = Schedule::boundary_scalings(999);
        assert!(skip < 1e-6 && (out - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bottleneck_is_one_sixty_fourth_of_image() {
        let backend = ToyLcmBackend::load(&BackendConfig::default()).unwrap();
        assert_eq!(backend.bottleneck_shape(), Shape::new(64, 8, 8));
        let backend = ToyLcmBackend::load(&small_config()).unwrap();
        assert_eq!(backend.bottleneck_shape(), Shape::new(64, 2, 2));
    }

    #[test]
    fn unknown_weights_and_adapters() {
        let missing = BackendConfig {
            model: "toy/nope".into(),
            ..small_config()
        };
        assert!(matches!(ToyLcmBackend::load(&missing), Err(Error::Load(_))));
        let adapter = BackendConfig {
            adapter: "toy/lcm-lora-xl".into(),
            ..small_config()
        };
        assert!(matches!(ToyLcmBackend::load(&adapter), Err(Error::Load(_))));
        let mismatched = BackendConfig {
            adapter: "toy/lcm-lora-base".into(),
            ..small_config()
        };
        assert!(matches!(ToyLcmBackend::load(&mismatched), Err(Error::Config(_))));
        let odd_size = BackendConfig {
            image_size: 72,
            ..small_config()
        };
        assert!(matches!(ToyLcmBackend::load(&odd_size), Err(Error::Config(_))));
    }

    #[test]
    fn capture_step_selects_a_different_tensor() {
        let mut first = ToyLcmBackend::load(&small_config()).unwrap();
        let mut second = ToyLcmBackend::load(&BackendConfig {
            capture_step: 2,
            ..small_config()
        })
        .unwrap();
        let a = first.run("a photo of food", 0, None).unwrap();
        let b = second.run("a photo of food", 0, None).unwrap();
        assert_ne!(a.captured, b.captured);
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn guidance_changes_image_not_capture() {
        let mut plain = ToyLcmBackend::load(&small_config()).unwrap();
        let mut guided = ToyLcmBackend::load(&BackendConfig {
            guidance_scale: 3.0,
            ..small_config()
        })
        .unwrap();
        let a = plain.run("a photo of food", 3, None).unwrap();
        let b = guided.run("a photo of food", 3, None).unwrap();
        // First-step capture sees the same latent and the conditional branch.
        assert_eq!(a.captured, b.captured);
        assert_ne!(a.image, b.image);
    }

    #[test]
    fn injection_moves_the_image() {
        let mut backend = ToyLcmBackend::load(&small_config()).unwrap();
        let base = backend.run("a photo of food", 0, None).unwrap();
        let offset = vec![1.0f32; base.captured.len()];
        let pushed = backend
            .run(
                "a photo of food",
                0,
                Some(Injection {
                    values: &offset,
                    scale: 2.0,
                }),
            )
            .unwrap();
        assert_eq!(base.captured, pushed.captured);
        assert_ne!(base.image, pushed.image);
    }
}
