//! Synthesis requests in both modes, routed through a pluggable backend.

pub mod http;
pub mod mock;
pub mod retry;
pub mod server;
pub mod wire;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PixelRect, Rect};
use crate::imaging::{resize, ImageBuf};
use crate::sampler::{Mode, PromptText};

pub const DEFAULT_SIZE: usize = 720;
pub const DEFAULT_PADDING_FRACTION: f64 = 0.1;

/// Per-mode sampling parameters sent to the backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeParams {
    pub steps: u32,
    pub guidance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
}

impl ModeParams {
    pub fn defaults(mode: Mode) -> Self {
        match mode {
            Mode::TextToImage => ModeParams {
                steps: 4,
                guidance: 0.0,
                strength: None,
            },
            Mode::ImageToImage => ModeParams {
                steps: 10,
                guidance: 0.4,
                strength: Some(0.6),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRequest {
    pub mode: Mode,
    pub prompt: PromptText,
    pub steps: u32,
    pub guidance: f64,
    /// Image-to-image only.
    pub strength: Option<f64>,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Required for image-to-image; its size fixes the output size.
    pub base_image: Option<ImageBuf>,
}

impl SynthRequest {
    pub fn text_to_image(prompt: PromptText, params: ModeParams, size: usize, seed: u64) -> Self {
        SynthRequest {
            mode: Mode::TextToImage,
            prompt,
            steps: params.steps,
            guidance: params.guidance,
            strength: None,
            width: size,
            height: size,
            seed,
            base_image: None,
        }
    }

    pub fn image_to_image(
        prompt: PromptText,
        params: ModeParams,
        base: ImageBuf,
        seed: u64,
    ) -> Self {
        SynthRequest {
            mode: Mode::ImageToImage,
            prompt,
            steps: params.steps,
            guidance: params.guidance,
            strength: Some(params.strength.unwrap_or(0.6)),
            width: base.width(),
            height: base.height(),
            seed,
            base_image: Some(base),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if !(self.guidance.is_finite() && self.guidance >= 0.0) {
            return bad(format!(
                "guidance must be non-negative, got {}",
                self.guidance
            ));
        }
        if self.width == 0 || self.height == 0 {
            return bad("output size must be positive".into());
        }
        match self.mode {
            Mode::TextToImage => {
                if self.strength.is_some() || self.base_image.is_some() {
                    return bad("text-to-image takes no strength or base image".into());
                }
            }
            Mode::ImageToImage => {
                match self.strength {
                    Some(s) if (0.0..=1.0).contains(&s) => {}
                    other => return bad(format!("strength must be in [0,1], got {other:?}")),
                }
                let Some(base) = &self.base_image else {
                    return bad("image-to-image requires a base image".into());
                };
                if (base.width(), base.height()) != (self.width, self.height) {
                    return bad(format!(
                        "base image is {}x{}, request says {}x{}",
                        base.width(),
                        base.height(),
                        self.width,
                        self.height
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub model_name: String,
    pub latency_seconds: f64,
}

/// A text/image-to-image service. Implementations must be shareable across worker threads.
pub trait SynthesisBackend: Send + Sync {
    /// Produce one image for the request and report the backend's model identifier.
    fn generate(&self, req: &SynthRequest) -> Result<(ImageBuf, String)>;

    /// One trivial request to prove the backend is reachable.
    fn health_check(&self) -> Result<()>;
}

/// Run one request, timing the backend call and checking the response size.
pub fn synthesize(
    backend: &dyn SynthesisBackend,
    req: &SynthRequest,
) -> Result<(ImageBuf, BackendInfo)> {
    req.validate()?;
    let started = Instant::now();
    let result = backend.generate(req);
    let latency_seconds = started.elapsed().as_secs_f64();
    let (image, model_name) = result?;
    log::debug!(
        "synth seq={} mode={} seed={} -> {} in {:.3}s",
        req.prompt.subject_substring,
        req.mode,
        req.seed,
        model_name,
        latency_seconds
    );
    if (image.width(), image.height()) != (req.width, req.height) {
        return Err(Error::Protocol(format!(
            "backend returned {}x{}, requested {}x{}",
            image.width(),
            image.height(),
            req.width,
            req.height
        )));
    }
    Ok((
        image,
        BackendInfo {
            model_name,
            latency_seconds,
        },
    ))
}

/// Expand `bbox` by `padding_fraction` of its size on every side, clip, crop, and scale to `size`².
pub fn prepare_base(
    image: &ImageBuf,
    bbox: &Rect,
    padding_fraction: f64,
    size: usize,
) -> Result<ImageBuf> {
    let rect = padded_pixel_rect(image, bbox, padding_fraction)?;
    let crop = image.crop_pixels(rect)?;
    resize(&crop, size, size)
}

/// The pixel rectangle `prepare_base` crops.
pub fn padded_pixel_rect(
    image: &ImageBuf,
    bbox: &Rect,
    padding_fraction: f64,
) -> Result<PixelRect> {
    let origin_ok = [bbox.x, bbox.y].iter().all(|v| (0.0..=1.0).contains(v));
    let extent_ok = [bbox.w, bbox.h].iter().all(|v| v.is_finite() && *v >= 0.0);
    if !(origin_ok && extent_ok) {
        return Err(Error::Input(format!("invalid base bbox {bbox:?}")));
    }
    if !(padding_fraction.is_finite() && padding_fraction >= 0.0) {
        return Err(Error::Input(format!(
            "padding must be non-negative, got {padding_fraction}"
        )));
    }
    let rect = PixelRect::from_normalized(
        &bbox.padded(padding_fraction),
        image.width(),
        image.height(),
    );
    if rect.is_empty() {
        return Err(Error::Input(format!(
            "bbox {bbox:?} has zero area after clipping"
        )));
    }
    Ok(rect)
}

/// Base photographs for image-to-image, already prepared to the request size.
#[derive(Debug, Clone)]
pub struct BasePool {
    pub images: Vec<(ImageBuf, String)>,
    pub padding_fraction: f64,
}

/// One row of a base-pool listing file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePoolEntry {
    pub path: String,
    pub source_id: String,
    pub brand: String,
    pub bbox: Rect,
}

impl BasePool {
    /// Load the pool from a JSON listing of [`BasePoolEntry`] (paths relative to the listing).
    /// Every entry's brand must be outside `excluded_brands`.
    pub fn load(
        listing: &std::path::Path,
        excluded_brands: &[String],
        padding_fraction: f64,
        size: usize,
    ) -> Result<BasePool> {
        let text = std::fs::read_to_string(listing).map_err(|e| Error::io(listing, e))?;
        let entries: Vec<BasePoolEntry> = serde_json::from_str(&text)?;
        if entries.is_empty() {
            return Err(Error::Config("base pool listing is empty".into()));
        }
        let root = listing.parent().unwrap_or(std::path::Path::new("."));
        let mut images = Vec::with_capacity(entries.len());
        for e in entries {
            if excluded_brands.contains(&e.brand) {
                return Err(Error::Config(format!(
                    "base pool image {} shows {}, a brand being classified",
                    e.source_id, e.brand
                )));
            }
            let path = root.join(&e.path);
            let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
            let img = crate::imaging::decode_png(&bytes)?;
            images.push((
                prepare_base(&img, &e.bbox, padding_fraction, size)?,
                e.source_id,
            ));
        }
        Ok(BasePool {
            images,
            padding_fraction,
        })
    }

    /// Procedural grey street scenes, used when no photographs are configured.
    pub fn procedural(size: usize, count: usize) -> BasePool {
        let images = (0..count)
            .map(|k| {
                let img = ImageBuf::from_fn(size, size, |x, y| {
                    let lane = if (x * 8 / size) % 4 == (k % 4) { 18 } else { 0 };
                    let g = (60 + (y * 110) / size + lane) as u8;
                    [g, g, g]
                });
                (img, format!("procedural-{k}"))
            })
            .collect();
        BasePool {
            images,
            padding_fraction: DEFAULT_PADDING_FRACTION,
        }
    }
}
