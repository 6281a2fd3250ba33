use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAX_INFERENCE_STEPS: u32 = 50;

fn default_backend() -> String {
    "toy-lcm".to_string()
}

fn default_dtype() -> String {
    "f32".to_string()
}

/// Everything needed to rebuild a backend handle bit-for-bit.
///
/// `backend` names the registered strategy; `model` and `adapter` are
/// resolved by that strategy (builtin names, local paths or URLs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "default_backend")]
    pub backend: String,
    pub model: String,
    pub adapter: String,
    pub num_inference_steps: u32,
    pub guidance_scale: f32,
    pub image_size: u32,
    #[serde(default)]
    pub capture_step: u32,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default)]
    pub deterministic: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            backend: default_backend(),
            model: "toy/ldm-mini".to_string(),
            adapter: "toy/lcm-lora-mini".to_string(),
            num_inference_steps: 4,
            guidance_scale: 1.0,
            image_size: 512,
            capture_step: 0,
            dtype: default_dtype(),
            deterministic: false,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backend.trim().is_empty() {
            return Err(Error::Config("backend: must name a registered backend".into()));
        }
        if self.model.trim().is_empty() {
            return Err(Error::Config("model: identifier is empty".into()));
        }
        if self.num_inference_steps == 0 || self.num_inference_steps > MAX_INFERENCE_STEPS {
            return Err(Error::Config(format!(
                "num_inference_steps: {} outside 1..={MAX_INFERENCE_STEPS}",
                self.num_inference_steps
            )));
        }
        if self.capture_step >= self.num_inference_steps {
            return Err(Error::Config(format!(
                "capture_step: {} must be below num_inference_steps {}",
                self.capture_step, self.num_inference_steps
            )));
        }
        if !self.guidance_scale.is_finite() || self.guidance_scale < 0.0 {
            return Err(Error::Config(format!(
                "guidance_scale: {} must be finite and >= 0",
                self.guidance_scale
            )));
        }
        if self.image_size < 8 || !self.image_size.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "image_size: {} must be a positive multiple of 8",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("BackendConfig always serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_is_valid() {
        let config = BackendConfig::default();
        config.validate().unwrap();
        assert_eq!(config.num_inference_steps, 4);
        assert_eq!(config.guidance_scale, 1.0);
        assert_eq!(config.image_size, 512);
    }

    #[test]
    fn zero_steps_rejected() {
        let config = BackendConfig {
            num_inference_steps: 0,
            ..Default::default()
        };
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn capture_step_must_precede_last_step() {
        let config = BackendConfig {
            capture_step: 4,
            ..Default::default()
        };
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("capture_step"), "{err}");
    }

    #[test]
    fn missing_optional_fields_take_defaults() {
        let config: BackendConfig = serde_json::from_str(
            r#"{"model":"toy/ldm-mini","adapter":"toy/lcm-lora-mini",
                "num_inference_steps":2,"guidance_scale":0.0,"image_size":64}"#,
        )
        .unwrap();
        assert_eq!(config.backend, "toy-lcm");
        assert_eq!(config.capture_step, 0);
        assert_eq!(config.dtype, "f32");
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = BackendConfig::default();
        let b = BackendConfig {
            capture_step: 1,
            ..Default::default()
        };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }

    proptest! {
        #[test]
        fn json_round_trip(
            steps in 1u32..=50,
            guidance in 0.0f32..20.0,
            size in 1u32..128,
            dtype in "[a-z0-9]{2,5}",
            deterministic in any::<bool>(),
        ) {
            let config = BackendConfig {
                num_inference_steps: steps,
                capture_step: steps - 1,
                guidance_scale: guidance,
                image_size: size * 8,
                dtype,
                deterministic,
                ..Default::default()
            };
            let text = serde_json::to_string(&config).unwrap();
            let back: BackendConfig = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back, &config);
            prop_assert_eq!(back.hash(), config.hash());
        }
    }
}
