use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in normalized image coordinates, top-left origin.
///
/// Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

const EPS: f64 = 1e-9;

impl Rect {
    pub const FULL: Rect = Rect {
        x: 0.0,
        y: 0.0,
        w: 1.0,
        h: 1.0,
    };

    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    /// `[0,1]` bounds, non-negative extent, and `x+w`, `y+h` inside the frame.
    pub fn is_valid(&self) -> bool {
        let vals = [self.x, self.y, self.w, self.h];
        vals.iter()
            .all(|v| v.is_finite() && *v >= -EPS && *v <= 1.0 + EPS)
            && self.x + self.w <= 1.0 + EPS
            && self.y + self.h <= 1.0 + EPS
    }

    pub fn validate(&self) -> Result<Self> {
        if self.is_valid() {
            Ok(*self)
        } else {
            Err(Error::Input(format!("invalid normalized rect {self:?}")))
        }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Rect {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        let inter = (x1 - x0).max(0.0) * (y1 - y0).max(0.0);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Grow by `fraction` of the rect's own width/height on every side, then clip to the frame.
    pub fn padded(&self, fraction: f64) -> Rect {
        let x0 = (self.x - fraction * self.w).max(0.0);
        let y0 = (self.y - fraction * self.h).max(0.0);
        let x1 = (self.x + self.w + fraction * self.w).min(1.0);
        let y1 = (self.y + self.h + fraction * self.h).min(1.0);
        Rect {
            x: x0,
            y: y0,
            w: (x1 - x0).max(0.0),
            h: (y1 - y0).max(0.0),
        }
    }
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x, r.y, r.w, r.h]
    }
}

/// Integer pixel rectangle, `[x, x+w) × [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

impl PixelRect {
    /// Round each normalized coordinate half-up against the image size, then clip to bounds.
    pub fn from_normalized(rect: &Rect, width: usize, height: usize) -> PixelRect {
        let clip = |v: i64, max: usize| v.clamp(0, max as i64) as usize;
        let x = clip(round_half_up(rect.x * width as f64), width);
        let y = clip(round_half_up(rect.y * height as f64), height);
        let w = clip(round_half_up(rect.w * width as f64), width);
        let h = clip(round_half_up(rect.h * height as f64), height);
        PixelRect {
            x,
            y,
            w: w.min(width - x),
            h: h.min(height - y),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_pixel_rounds_up() {
        let r = PixelRect::from_normalized(&Rect::new(0.0, 0.0, 0.5, 0.5), 101, 101);
        assert_eq!((r.w, r.h), (51, 51));
    }

    #[test]
    fn clipped_at_edges() {
        let r = PixelRect::from_normalized(&Rect::new(0.9, 0.9, 0.2, 0.2), 100, 100);
        assert_eq!(
            r,
            PixelRect {
                x: 90,
                y: 90,
                w: 10,
                h: 10
            }
        );
    }

    #[test]
    fn padded_expands_by_own_extent() {
        let r = Rect::new(0.25, 0.25, 0.5, 0.5).padded(0.1);
        assert!((r.x - 0.2).abs() < 1e-12 && (r.w - 0.6).abs() < 1e-12);
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = Rect::new(0.1, 0.1, 0.2, 0.2);
        assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a.iou(&Rect::new(0.5, 0.5, 0.1, 0.1)), 0.0);
    }

    #[test]
    fn serde_as_array() {
        let s = serde_json::to_string(&Rect::new(0.0, 0.25, 0.5, 1.0)).unwrap();
        assert_eq!(s, "[0.0,0.25,0.5,1.0]");
    }
}
