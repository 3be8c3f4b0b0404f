//! Detection-backed quality gate: exactly one confident vehicle passes, and
//! its box becomes the sample's bounding box and crop.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PixelRect, Rect};
use crate::imaging::ImageBuf;
use crate::synthesis::mock::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    pub bbox: Rect,
}

const SLACK: f64 = 1e-6;

impl Detection {
    /// Validates ranges; coordinates within `1e-6` of the frame are snapped onto it.
    pub fn new(label: String, confidence: f64, bbox: Rect) -> Result<Detection> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Input(format!(
                "confidence {confidence} outside [0,1]"
            )));
        }
        let in_range = |v: f64| v.is_finite() && (-SLACK..=1.0 + SLACK).contains(&v);
        if ![bbox.x, bbox.y, bbox.w, bbox.h].into_iter().all(in_range)
            || bbox.x + bbox.w > 1.0 + SLACK
            || bbox.y + bbox.h > 1.0 + SLACK
        {
            return Err(Error::Input(format!(
                "detection bbox {bbox:?} outside the frame"
            )));
        }
        let x = bbox.x.clamp(0.0, 1.0);
        let y = bbox.y.clamp(0.0, 1.0);
        let bbox = Rect::new(x, y, bbox.w.clamp(0.0, 1.0 - x), bbox.h.clamp(0.0, 1.0 - y));
        Ok(Detection {
            label,
            confidence,
            bbox,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NoCar,
    MultipleCars,
    LowConfidence,
}

impl RejectReason {
    pub const ALL: [RejectReason; 3] = [
        RejectReason::NoCar,
        RejectReason::MultipleCars,
        RejectReason::LowConfidence,
    ];
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::NoCar => "no_car",
            RejectReason::MultipleCars => "multiple_cars",
            RejectReason::LowConfidence => "low_confidence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum GateDecision {
    Accept { bbox: Rect, score: f64 },
    Reject { reason: RejectReason },
}

impl GateDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, GateDecision::Accept { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub min_confidence: f64,
    pub vehicle_labels: BTreeSet<String>,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            min_confidence: 0.25,
            vehicle_labels: ["car".to_string()].into(),
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vehicle_labels.is_empty() {
            return Err(Error::Config("vehicle label set is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config(format!(
                "min confidence {} outside [0,1]",
                self.min_confidence
            )));
        }
        Ok(())
    }
}

/// Decide on one image's detections. Labels outside `vehicle_labels` are ignored.
pub fn assess(detections: &[Detection], cfg: &GateConfig) -> GateDecision {
    let vehicles: Vec<&Detection> = detections
        .iter()
        .filter(|d| cfg.vehicle_labels.contains(&d.label))
        .collect();
    let confident: Vec<&&Detection> = vehicles
        .iter()
        .filter(|d| d.confidence >= cfg.min_confidence)
        .collect();
    match confident.as_slice() {
        [] if vehicles.is_empty() => GateDecision::Reject {
            reason: RejectReason::NoCar,
        },
        [] => GateDecision::Reject {
            reason: RejectReason::LowConfidence,
        },
        [one] => GateDecision::Accept {
            bbox: one.bbox,
            score: one.confidence,
        },
        _ => GateDecision::Reject {
            reason: RejectReason::MultipleCars,
        },
    }
}

/// Crop to the half-up rounded pixel rectangle of `bbox`.
pub fn crop_to_bbox(image: &ImageBuf, bbox: &Rect) -> Result<ImageBuf> {
    bbox.validate()?;
    let rect = PixelRect::from_normalized(bbox, image.width(), image.height());
    if rect.is_empty() {
        return Err(Error::Input(format!("bbox {bbox:?} rounds to zero pixels")));
    }
    image.crop_pixels(rect)
}

/// An object detector. Implementations must be shareable across worker threads.
pub trait DetectionBackend: Send + Sync {
    fn detect_raw(&self, image: &ImageBuf) -> Result<Vec<Detection>>;

    fn health_check(&self) -> Result<()> {
        Ok(())
    }
}

/// Run a detector; results come back sorted by descending confidence.
pub fn detect(backend: &dyn DetectionBackend, image: &ImageBuf) -> Result<Vec<Detection>> {
    let mut dets = backend.detect_raw(image)?;
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(dets)
}

/// Reads the mock renderer's embedded ground truth; every blob is a `car` at confidence 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDetector;

impl DetectionBackend for OracleDetector {
    fn detect_raw(&self, image: &ImageBuf) -> Result<Vec<Detection>> {
        let gt = GroundTruth::from_image(image)
            .ok_or_else(|| Error::Input("image carries no ground-truth metadata".into()))??;
        gt.blobs
            .into_iter()
            .map(|b| Detection::new("car".into(), 1.0, b.bbox))
            .collect()
    }
}

/// Connected components (8-neighbour) of pixels with HSV saturation above
/// `saturation_threshold`; components smaller than `min_area_fraction` of the
/// image are dropped.
#[derive(Debug, Clone, Copy)]
pub struct BlobDetector {
    pub saturation_threshold: f64,
    pub min_area_fraction: f64,
}

impl Default for BlobDetector {
    fn default() -> Self {
        BlobDetector {
            saturation_threshold: 0.5,
            min_area_fraction: 0.005,
        }
    }
}

impl DetectionBackend for BlobDetector {
    fn detect_raw(&self, image: &ImageBuf) -> Result<Vec<Detection>> {
        let (w, h) = (image.width(), image.height());
        let mask: Vec<bool> = image
            .pixels()
            .chunks_exact(3)
            .map(|p| {
                let max = p[0].max(p[1]).max(p[2]) as f64;
                let min = p[0].min(p[1]).min(p[2]) as f64;
                max > 0.0 && (max - min) / max > self.saturation_threshold
            })
            .collect();
        let min_area = (self.min_area_fraction * (w * h) as f64).max(1.0);
        let mut seen = vec![false; w * h];
        let mut stack = Vec::new();
        let mut out = Vec::new();
        for start in 0..w * h {
            if !mask[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut x0, mut y0, mut x1, mut y1, mut area) = (w, h, 0, 0, 0usize);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                area += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let j = ny * w + nx;
                        if mask[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            if (area as f64) < min_area {
                continue;
            }
            let confidence = 0.5 + 0.5 * (area as f64 / (4.0 * min_area)).min(1.0);
            let bbox = Rect::new(
                x0 as f64 / w as f64,
                y0 as f64 / h as f64,
                (x1 + 1 - x0) as f64 / w as f64,
                (y1 + 1 - y0) as f64 / h as f64,
            );
            out.push(Detection::new("car".into(), confidence, bbox)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    MockOracle,
    MockBlob,
    Http,
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock-oracle" => Ok(DetectorKind::MockOracle),
            "mock-blob" => Ok(DetectorKind::MockBlob),
            "http" => Ok(DetectorKind::Http),
            other => Err(Error::Config(format!("unknown detector `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::PromptText;
    use crate::synthesis::mock::{mock_render, FaultProfile};
    use proptest::prelude::*;

    fn det(label: &str, confidence: f64) -> Detection {
        Detection::new(label.into(), confidence, Rect::new(0.1, 0.1, 0.3, 0.3)).unwrap()
    }

    fn prompt() -> PromptText {
        PromptText {
            text: "a gray Opel Corsa 2014".into(),
            subject_substring: "gray Opel Corsa 2014".into(),
        }
    }

    #[test]
    fn single_car_accepted() {
        let d = det("car", 0.95);
        assert_eq!(
            assess(std::slice::from_ref(&d), &GateConfig::default()),
            GateDecision::Accept {
                bbox: d.bbox,
                score: 0.95
            }
        );
    }

    #[test]
    fn two_cars_rejected() {
        assert_eq!(
            assess(&[det("car", 0.9), det("car", 0.8)], &GateConfig::default()),
            GateDecision::Reject {
                reason: RejectReason::MultipleCars
            }
        );
    }

    /// Exhaustive decision table over small detection lists.
    #[test]
    fn decision_table() {
        let cfg = GateConfig::default();
        let kinds = [
            ("car", 0.9),  // confident vehicle
            ("car", 0.10), // weak vehicle
            ("person", 0.99),
        ];
        let mut lists: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..3 {
            let mut next = Vec::new();
            for l in &lists {
                for k in 0..kinds.len() {
                    let mut m = l.clone();
                    m.push(k);
                    next.push(m);
                }
            }
            lists.extend(next);
        }
        lists.sort();
        lists.dedup();
        for list in lists {
            let dets: Vec<Detection> = list.iter().map(|&k| det(kinds[k].0, kinds[k].1)).collect();
            let confident = list.iter().filter(|&&k| k == 0).count();
            let weak = list.iter().filter(|&&k| k == 1).count();
            let expected = match (confident, weak) {
                (0, 0) => GateDecision::Reject {
                    reason: RejectReason::NoCar,
                },
                (0, _) => GateDecision::Reject {
                    reason: RejectReason::LowConfidence,
                },
                (1, _) => GateDecision::Accept {
                    bbox: dets[0].bbox,
                    score: 0.9,
                },
                _ => GateDecision::Reject {
                    reason: RejectReason::MultipleCars,
                },
            };
            assert_eq!(assess(&dets, &cfg), expected, "{list:?}");
        }
    }

    #[test]
    fn truck_counts_only_when_configured() {
        let dets = [det("car", 0.9), det("truck", 0.9)];
        assert!(assess(&dets, &GateConfig::default()).is_accept());
        let wide = GateConfig {
            vehicle_labels: ["car", "truck", "van"].map(String::from).into(),
            ..Default::default()
        };
        assert_eq!(
            assess(&dets, &wide),
            GateDecision::Reject {
                reason: RejectReason::MultipleCars
            }
        );
    }

    #[test]
    fn identity_crop() {
        let img = ImageBuf::from_fn(13, 9, |x, y| [x as u8, y as u8, 1]);
        assert_eq!(crop_to_bbox(&img, &Rect::FULL).unwrap(), img);
    }

    #[test]
    fn quarter_crop_matches_source_pixels() {
        let img = ImageBuf::from_fn(100, 100, |x, y| [x as u8, y as u8, (x ^ y) as u8]);
        let c = crop_to_bbox(&img, &Rect::new(0.25, 0.25, 0.5, 0.5)).unwrap();
        assert_eq!((c.width(), c.height()), (50, 50));
        for y in 0..50 {
            for x in 0..50 {
                assert_eq!(c.get(x, y), img.get(x + 25, y + 25));
            }
        }
    }

    #[test]
    fn half_pixel_crop_rounds_up() {
        let img = ImageBuf::filled(101, 101, [0, 0, 0]);
        let c = crop_to_bbox(&img, &Rect::new(0.0, 0.0, 0.5, 0.5)).unwrap();
        assert_eq!((c.width(), c.height()), (51, 51));
    }

    #[test]
    fn zero_area_crop_is_input_error() {
        let img = ImageBuf::filled(10, 10, [0, 0, 0]);
        assert!(matches!(
            crop_to_bbox(&img, &Rect::new(0.5, 0.5, 0.01, 0.5)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn oracle_reports_two_blobs() {
        let f = FaultProfile {
            p_zero_cars: 0.0,
            p_two_cars: 1.0,
        };
        let img = mock_render(&prompt(), 3, &f, 256, 256, None);
        let gt = GroundTruth::from_image(&img).unwrap().unwrap();
        let dets = detect(&OracleDetector, &img).unwrap();
        assert_eq!(dets.len(), 2);
        for (d, b) in dets.iter().zip(&gt.blobs) {
            assert_eq!(d.confidence, 1.0);
            assert_eq!(d.bbox, b.bbox);
        }
    }

    #[test]
    fn blob_detector_finds_gray_car() {
        let img = mock_render(&prompt(), 8, &FaultProfile::default(), 720, 720, None);
        let gt = GroundTruth::from_image(&img).unwrap().unwrap();
        let dets = detect(&BlobDetector::default(), &img).unwrap();
        assert_eq!(dets.len(), 1);
        assert!(dets[0].bbox.iou(&gt.blobs[0].bbox) >= 0.9);
    }

    #[test]
    fn blank_image_has_no_detections() {
        let img = ImageBuf::filled(64, 64, [90, 90, 90]);
        assert!(detect(&BlobDetector::default(), &img).unwrap().is_empty());
    }

    #[test]
    fn detections_sorted_by_confidence() {
        struct Fixed;
        impl DetectionBackend for Fixed {
            fn detect_raw(&self, _: &ImageBuf) -> Result<Vec<Detection>> {
                Ok(vec![det("car", 0.2), det("car", 0.9), det("person", 0.5)])
            }
        }
        let d = detect(&Fixed, &ImageBuf::filled(2, 2, [0, 0, 0])).unwrap();
        let c: Vec<f64> = d.iter().map(|d| d.confidence).collect();
        assert_eq!(c, vec![0.9, 0.5, 0.2]);
    }

    #[test]
    fn detection_ranges_enforced() {
        assert!(Detection::new("car".into(), 1.2, Rect::FULL).is_err());
        assert!(Detection::new("car".into(), 0.5, Rect::new(0.5, 0.0, 0.6, 1.0)).is_err());
        let snapped =
            Detection::new("car".into(), 0.5, Rect::new(0.5, 0.0, 0.5000001, 1.0)).unwrap();
        assert!(snapped.bbox.x + snapped.bbox.w <= 1.0);
    }

    proptest! {
        /// Every list maps to exactly the verdict the counting rule predicts.
        #[test]
        fn assess_partition(entries in proptest::collection::vec((0usize..3, 0.0f64..=1.0), 0..6), min in 0.0f64..=1.0) {
            let labels = ["car", "truck", "person"];
            let dets: Vec<Detection> = entries.iter().map(|(l, c)| det(labels[*l], *c)).collect();
            let cfg = GateConfig { min_confidence: min, ..Default::default() };
            let vehicles = dets.iter().filter(|d| d.label == "car").count();
            let confident = dets.iter().filter(|d| d.label == "car" && d.confidence >= min).count();
            let decision = assess(&dets, &cfg);
            match decision {
                GateDecision::Accept { score, .. } => { prop_assert_eq!(confident, 1); prop_assert!(score >= min); }
                GateDecision::Reject { reason: RejectReason::MultipleCars } => prop_assert!(confident >= 2),
                GateDecision::Reject { reason: RejectReason::LowConfidence } => prop_assert!(confident == 0 && vehicles > 0),
                GateDecision::Reject { reason: RejectReason::NoCar } => prop_assert_eq!(vehicles, 0),
            }
        }

        #[test]
        fn crop_dims_follow_rounding(
            w in 1usize..200, h in 1usize..200,
            x in 0.0f64..1.0, y in 0.0f64..1.0, fw in 0.0f64..1.0, fh in 0.0f64..1.0,
        ) {
            let bbox = Rect::new(x, y, fw * (1.0 - x), fh * (1.0 - y));
            let img = ImageBuf::filled(w, h, [1, 2, 3]);
            // Independent arithmetic: floor(v + 1/2), clipped.
            let px = |v: f64, n: usize| ((v * n as f64 + 0.5).floor() as usize).min(n);
            let (ox, oy) = (px(bbox.x, w), px(bbox.y, h));
            let ow = px(bbox.w, w).min(w - ox);
            let oh = px(bbox.h, h).min(h - oy);
            match crop_to_bbox(&img, &bbox) {
                Ok(c) => prop_assert_eq!((c.width(), c.height()), (ow, oh)),
                Err(_) => prop_assert!(ow == 0 || oh == 0),
            }
        }
    }
}
