use super::{AugmentConfig, ImageBuf};
use crate::error::{Error, Result};
use crate::rng::DetRng;

#[inline]
fn to_u8(v: f64) -> u8 {
    // Saturating cast: truncation equals floor on the non-negative range, and
    // everything below 0 or above 255 lands on the bound.
    (v + 0.5) as u8
}

/// Source sample positions for one axis under half-pixel-centre mapping.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize to exactly `w`×`h`; aspect ratio is not preserved.
///
/// Same-size resize returns the input pixels unchanged.
pub fn resize(image: &ImageBuf, w: usize, h: usize) -> Result<ImageBuf> {
    if w == image.width() && h == image.height() && w > 0 && h > 0 {
        let mut out = image.clone();
        out.metadata.clear();
        return Ok(out);
    }
    let src = image.pixels();
    let stride = image.width() * 3;
    resample(image.width(), image.height(), w, h, |x, y| {
        let i = y * stride + x * 3;
        [src[i], src[i + 1], src[i + 2]]
    })
}

/// Bilinear resampling of a `src_w`×`src_h` image whose pixels are produced by `fetch`.
fn resample(
    src_w: usize,
    src_h: usize,
    w: usize,
    h: usize,
    fetch: impl Fn(usize, usize) -> [u8; 3],
) -> Result<ImageBuf> {
    if w == 0 || h == 0 {
        return Err(Error::Input(format!("resize target {w}x{h} is empty")));
    }
    let xs = axis_taps(src_w, w);
    let ys = axis_taps(src_h, h);
    let mut pixels = Vec::with_capacity(w * h * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let (a, b, c, d) = (fetch(x0, y0), fetch(x1, y0), fetch(x0, y1), fetch(x1, y1));
            for k in 0..3 {
                let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
                let bot = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
                pixels.push(to_u8(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    ImageBuf::new(w, h, pixels)
}

/// Inverse mapping of a rotation about the image centre with edge replication.
struct Rotation<'a> {
    src: &'a [u8],
    w: usize,
    h: usize,
    sin: f64,
    cos: f64,
    cx: f64,
    cy: f64,
}

impl<'a> Rotation<'a> {
    fn new(image: &'a ImageBuf, degrees: f64) -> Result<Self> {
        if degrees.is_nan() || degrees.abs() >= 90.0 {
            return Err(Error::Input(format!(
                "rotation of {degrees} degrees is outside (-90, 90)"
            )));
        }
        let (w, h) = (image.width(), image.height());
        let (sin, cos) = degrees.to_radians().sin_cos();
        Ok(Rotation {
            src: image.pixels(),
            w,
            h,
            sin,
            cos,
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
        })
    }

    #[inline]
    fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let (w, h, src) = (self.w, self.h, self.src);
        let dx = x as f64 - self.cx;
        let dy = y as f64 - self.cy;
        // inverse mapping: output pixel ← source at R(-θ)·d
        let sx = (self.cos * dx + self.sin * dy + self.cx).clamp(0.0, (w - 1) as f64);
        let sy = (-self.sin * dx + self.cos * dy + self.cy).clamp(0.0, (h - 1) as f64);
        let x0 = sx as usize;
        let y0 = sy as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = sx - x0 as f64;
        let fy = sy - y0 as f64;
        let i00 = (y0 * w + x0) * 3;
        let i01 = (y0 * w + x1) * 3;
        let i10 = (y1 * w + x0) * 3;
        let i11 = (y1 * w + x1) * 3;
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = src[i00 + c] as f64 * (1.0 - fx) + src[i01 + c] as f64 * fx;
            let bot = src[i10 + c] as f64 * (1.0 - fx) + src[i11 + c] as f64 * fx;
            out[c] = to_u8(top * (1.0 - fy) + bot * fy);
        }
        out
    }
}

/// Rotate about the image centre by `degrees` (positive is clockwise on screen),
/// keeping dimensions. Samples outside the frame replicate the nearest edge.
pub fn rotate(image: &ImageBuf, degrees: f64) -> Result<ImageBuf> {
    let rot = Rotation::new(image, degrees)?;
    if degrees == 0.0 {
        let mut out = image.clone();
        out.metadata.clear();
        return Ok(out);
    }
    let (w, h) = (image.width(), image.height());
    let mut pixels = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            pixels.extend_from_slice(&rot.pixel(x, y));
        }
    }
    ImageBuf::new(w, h, pixels)
}

/// Rotation angle for sample `index`: uniform on `[-max, +max]`, fixed by `(rotation_seed, index)`.
pub fn augment_angle(cfg: &AugmentConfig, index: u64) -> f64 {
    if cfg.rotation_max_degrees == 0.0 {
        return 0.0;
    }
    let mut rng = DetRng::new(cfg.rotation_seed, index);
    rng.range_f64(-cfg.rotation_max_degrees, cfg.rotation_max_degrees)
}

/// Rotate by the sample's angle, then resize to `target_size`².
///
/// Equal to `resize(&rotate(image, angle)?, n, n)`, but only the rotated
/// pixels the resize actually reads are computed.
pub fn augment(image: &ImageBuf, cfg: &AugmentConfig, index: u64) -> Result<ImageBuf> {
    cfg.validate()?;
    let angle = augment_angle(cfg, index);
    let n = cfg.target_size;
    if angle == 0.0 || (image.width(), image.height()) == (n, n) {
        return resize(&rotate(image, angle)?, n, n);
    }
    let rot = Rotation::new(image, angle)?;
    resample(image.width(), image.height(), n, n, |x, y| rot.pixel(x, y))
}
