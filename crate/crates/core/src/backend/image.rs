use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which offset, at which scale, was injected to produce an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetDescriptor {
    pub label: String,
    pub scale: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub pixels: RgbImage,
    pub prompt_id: String,
    pub seed: u64,
    pub offset: Option<OffsetDescriptor>,
}

impl GeneratedImage {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(&self.pixels)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

pub fn encode_png(pixels: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    pixels
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Backend(format!("png encode failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Input(format!("png decode failed: {e}")))?;
    Ok(img.to_rgb8())
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}
