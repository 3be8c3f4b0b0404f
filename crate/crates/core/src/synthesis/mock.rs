//! Deterministic procedural stand-in for a diffusion backend.
//!
//! Renders a low-saturation street-like background and zero, one or two
//! rectangular "cars". Each car is a fill in the prompt's color framed by a
//! saturated outline, so saturation-based detection finds achromatic cars too.
//! The true layout is stored in the image metadata under [`GT_KEY`].

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SynthRequest, SynthesisBackend};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::imaging::ImageBuf;
use crate::rng::DetRng;
use crate::sampler::PromptText;

pub const GT_KEY: &str = "synthset-gt";
pub const MOCK_MODEL: &str = "synthset-mock-v1";

const OUTLINE: [u8; 3] = [255, 196, 0];

/// Probability of rendering zero or two cars instead of one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultProfile {
    pub p_zero_cars: f64,
    pub p_two_cars: f64,
}

impl FaultProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.p_zero_cars, self.p_two_cars]
            .iter()
            .all(|p| (0.0..=1.0).contains(p))
            && self.p_zero_cars + self.p_two_cars <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid fault profile {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobTruth {
    pub bbox: Rect,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub blobs: Vec<BlobTruth>,
}

impl GroundTruth {
    pub fn blob_count(&self) -> usize {
        self.blobs.len()
    }

    pub fn from_image(image: &ImageBuf) -> Option<Result<GroundTruth>> {
        image
            .metadata
            .get(GT_KEY)
            .map(|s| serde_json::from_str(s).map_err(Error::from))
    }
}

const NAMED_COLORS: [(&str, [u8; 3]); 14] = [
    ("black", [22, 22, 24]),
    ("white", [236, 236, 232]),
    ("gray", [128, 128, 130]),
    ("grey", [128, 128, 130]),
    ("silver", [190, 192, 196]),
    ("blue", [28, 64, 196]),
    ("red", [200, 28, 32]),
    ("green", [30, 150, 56]),
    ("brown", [122, 70, 30]),
    ("yellow", [230, 206, 40]),
    ("orange", [236, 120, 20]),
    ("beige", [214, 196, 150]),
    ("purple", [110, 40, 150]),
    ("gold", [200, 160, 60]),
];

/// Fill color for a color word; unknown words hash to a saturated hue.
pub fn color_rgb(word: &str) -> [u8; 3] {
    let lower = word.to_ascii_lowercase();
    if let Some((_, rgb)) = NAMED_COLORS.iter().find(|(n, _)| *n == lower) {
        return *rgb;
    }
    let h = prompt_hash(&lower);
    let mut rgb = [
        (h & 0xff) as u8,
        ((h >> 8) & 0xff) as u8,
        ((h >> 16) & 0xff) as u8,
    ];
    rgb[(h >> 24) as usize % 3] = 230;
    rgb[(h >> 26) as usize % 3] = 20;
    rgb
}

/// The first named color among the subject's words, else its first word.
///
/// Over the wire the subject is unknown and the whole prompt stands in for
/// it, so named colors are found anywhere in the text.
pub fn color_word(prompt: &PromptText) -> String {
    let subject = prompt.subject_substring.to_ascii_lowercase();
    let mut words = subject
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty());
    words
        .clone()
        .find(|w| NAMED_COLORS.iter().any(|(n, _)| n == w))
        .or_else(|| words.next())
        .unwrap_or("")
        .to_string()
}

pub fn prompt_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

#[inline]
fn pixel_noise(x: usize, y: usize, key: u64) -> u64 {
    let mut h = key ^ ((x as u64) << 32 | y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= h >> 31;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^ (h >> 29)
}

fn blob_rect(
    rng: &mut DetRng,
    x_lo: f64,
    x_hi: f64,
    w_range: (f64, f64),
    w: usize,
    h: usize,
) -> [usize; 4] {
    let wf = rng.range_f64(w_range.0, w_range.1);
    let hf = rng.range_f64(0.22, 0.5);
    let xf = rng.range_f64(x_lo, (x_hi - wf).max(x_lo));
    let yf = rng.range_f64(0.03, 0.97 - hf);
    let px = |f: f64, n: usize| ((f * n as f64).round() as usize).min(n);
    let (bx, by) = (px(xf, w), px(yf, h));
    let bw = px(wf, w).max(8).min(w - bx);
    let bh = px(hf, h).max(8).min(h - by);
    [bx, by, bw, bh]
}

/// Render the mock image for `(prompt, seed, fault)`.
///
/// With a base image the background is a grey blend of the base and the
/// procedural texture, weighted by `strength`.
pub fn mock_render(
    prompt: &PromptText,
    seed: u64,
    fault: &FaultProfile,
    width: usize,
    height: usize,
    base: Option<(&ImageBuf, f64)>,
) -> ImageBuf {
    let mut rng = DetRng::new(seed, prompt_hash(&prompt.text));
    let u = rng.unit();
    let count = if u < fault.p_zero_cars {
        0
    } else if u < fault.p_zero_cars + fault.p_two_cars {
        2
    } else {
        1
    };
    let texture_key = rng.next_u64();

    let resized;
    let base = match base {
        Some((b, s)) if (b.width(), b.height()) != (width, height) => {
            resized = crate::imaging::resize(b, width, height).expect("non-empty size");
            Some((&resized, s))
        }
        other => other,
    };
    // Blend weight of the procedural texture in 1/1024 steps.
    let weight = base.map(|(_, s)| (s.clamp(0.0, 1.0) * 1024.0 + 0.5) as i32);
    let mut image = ImageBuf::filled(width, height, [0, 0, 0]);
    let stride = width * 3;
    let mut grey = vec![0i32; width];
    for (y, row) in image.pixels_mut().chunks_exact_mut(stride).enumerate() {
        let shade = 70 + (120 * y / height) as i32;
        for (x, g) in grey.iter_mut().enumerate() {
            *g = shade + (((pixel_noise(x, y, texture_key) >> 32) * 25) >> 32) as i32 - 12;
        }
        if let (Some((b, _)), Some(w)) = (base, weight) {
            let b = &b.pixels()[y * stride..(y + 1) * stride];
            for (g, p) in grey.iter_mut().zip(b.chunks_exact(3)) {
                let luma = (306 * p[0] as i32 + 601 * p[1] as i32 + 117 * p[2] as i32) >> 10;
                *g = (luma * (1024 - w) + *g * w + 512) >> 10;
            }
        }
        for (g, px) in grey.iter().zip(row.chunks_exact_mut(3)) {
            let g = (*g).clamp(24, 230);
            px[0] = (g + 3) as u8;
            px[1] = g as u8;
            px[2] = (g - 3) as u8;
        }
    }

    let rects: Vec<[usize; 4]> = match count {
        0 => vec![],
        1 => vec![blob_rect(&mut rng, 0.02, 0.98, (0.3, 0.7), width, height)],
        _ => vec![
            blob_rect(&mut rng, 0.03, 0.46, (0.16, 0.36), width, height),
            blob_rect(&mut rng, 0.54, 0.97, (0.16, 0.36), width, height),
        ],
    };

    let color = color_word(prompt);
    let fill = color_rgb(&color);
    let mut blobs = Vec::with_capacity(rects.len());
    for [bx, by, bw, bh] in rects {
        let t = (bw.min(bh) / 8).max(2);
        let pixels = image.pixels_mut();
        for y in by..by + bh {
            let row = &mut pixels[(y * width + bx) * 3..(y * width + bx + bw) * 3];
            let edge_row = y < by + t || y >= by + bh - t;
            for (i, px) in row.chunks_exact_mut(3).enumerate() {
                let edge = edge_row || i < t || i >= bw - t;
                px.copy_from_slice(if edge { &OUTLINE } else { &fill });
            }
        }
        blobs.push(BlobTruth {
            bbox: Rect::new(
                bx as f64 / width as f64,
                by as f64 / height as f64,
                bw as f64 / width as f64,
                bh as f64 / height as f64,
            ),
            color: color.clone(),
        });
    }
    let gt = serde_json::to_string(&GroundTruth { blobs }).expect("plain data");
    image.with_metadata(GT_KEY, gt)
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub fault: FaultProfile,
}

impl MockBackend {
    pub fn new(fault: FaultProfile) -> Self {
        MockBackend { fault }
    }
}

impl SynthesisBackend for MockBackend {
    fn generate(&self, req: &SynthRequest) -> Result<(ImageBuf, String)> {
        let base = req
            .base_image
            .as_ref()
            .map(|b| (b, req.strength.unwrap_or(0.6)));
        let image = mock_render(
            &req.prompt,
            req.seed,
            &self.fault,
            req.width,
            req.height,
            base,
        );
        Ok((image, MOCK_MODEL.to_string()))
    }

    fn health_check(&self) -> Result<()> {
        self.fault.validate()
    }
}
