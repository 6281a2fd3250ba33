use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bottleneck tensor shape, serialized as `[channels, height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<[usize; 3]> for Shape {
    fn from(dims: [usize; 3]) -> Self {
        Shape::new(dims[0], dims[1], dims[2])
    }
}

impl From<Shape> for [usize; 3] {
    fn from(shape: Shape) -> Self {
        [shape.channels, shape.height, shape.width]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// One captured bottleneck activation.
#[derive(Debug, Clone, PartialEq)]
pub struct HVector {
    values: Vec<f32>,
    shape: Shape,
    pub prompt_id: String,
    pub seed: u64,
    pub capture_step: u32,
    pub config_hash: String,
}

impl HVector {
    pub fn new(
        values: Vec<f32>,
        shape: Shape,
        prompt_id: impl Into<String>,
        seed: u64,
        capture_step: u32,
        config_hash: impl Into<String>,
    ) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Input(format!("h-vector shape {shape} is empty")));
        }
        if values.len() != shape.len() {
            return Err(Error::Input(format!(
                "h-vector has {} values but shape {shape} needs {}",
                values.len(),
                shape.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "h-vector value at index {pos} is not finite ({})",
                values[pos]
            )));
        }
        Ok(Self {
            values,
            shape,
            prompt_id: prompt_id.into(),
            seed,
            capture_step,
            config_hash: config_hash.into(),
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn with_prompt_id(mut self, prompt_id: impl Into<String>) -> Self {
        self.prompt_id = prompt_id.into();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let err = HVector::new(vec![1.0; 5], Shape::new(2, 1, 2), "p", 0, 0, "h").unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn rejects_non_finite() {
        let err = HVector::new(vec![1.0, f32::NAN], Shape::new(2, 1, 1), "p", 0, 0, "h");
        assert!(err.is_err());
        let err = HVector::new(vec![f32::INFINITY, 0.0], Shape::new(2, 1, 1), "p", 0, 0, "h");
        assert!(err.is_err());
    }

    #[test]
    fn rejects_empty_shape() {
        assert!(HVector::new(vec![], Shape::new(0, 4, 4), "p", 0, 0, "h").is_err());
    }

    #[test]
    fn shape_serializes_as_triple() {
        let text = serde_json::to_string(&Shape::new(64, 8, 8)).unwrap();
        assert_eq!(text, "[64,8,8]");
    }
}
