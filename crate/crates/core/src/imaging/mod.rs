//! RGB8 pixel buffers, PNG codec and deterministic transforms.

mod codec;
mod transform;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelRect;

pub use codec::{decode_png, encode_png};
pub use transform::{augment, augment_angle, resize, rotate};

/// Row-major RGB8 image with optional textual metadata (PNG `tEXt` chunks).
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub metadata: BTreeMap<String, String>,
}

impl std::fmt::Debug for ImageBuf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuf")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("metadata", &self.metadata)
            .finish_non_exhaustive()
    }
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::Input(format!(
                "pixel buffer of {} bytes does not match {width}x{height}x3",
                pixels.len()
            )));
        }
        Ok(ImageBuf {
            width,
            height,
            pixels,
            metadata: BTreeMap::new(),
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        ImageBuf::new(width, height, pixels).expect("consistent dimensions")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        ImageBuf::new(width, height, pixels).expect("consistent dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn with_metadata(mut self, key: &str, value: String) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }

    /// Copy out the pixels inside `rect`. Metadata is not carried over.
    pub fn crop_pixels(&self, rect: PixelRect) -> Result<ImageBuf> {
        if rect.is_empty() || rect.x + rect.w > self.width || rect.y + rect.h > self.height {
            return Err(Error::Input(format!(
                "crop rect {rect:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(rect.w * rect.h * 3);
        for y in rect.y..rect.y + rect.h {
            let start = (y * self.width + rect.x) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + rect.w * 3]);
        }
        ImageBuf::new(rect.w, rect.h, pixels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub target_size: usize,
    pub rotation_max_degrees: f64,
    pub rotation_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            target_size: 64,
            rotation_max_degrees: 15.0,
            rotation_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size < 8 {
            return Err(Error::Config(format!(
                "target size must be at least 8, got {}",
                self.target_size
            )));
        }
        if !(self.rotation_max_degrees >= 0.0 && self.rotation_max_degrees < 90.0) {
            return Err(Error::Config(format!(
                "rotation bound must be in [0, 90), got {}",
                self.rotation_max_degrees
            )));
        }
        Ok(())
    }
}
