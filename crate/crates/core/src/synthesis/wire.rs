//! JSON bodies of the backend HTTP protocol.
//!
//! ```text
//! POST /v1/txt2img {"prompt","steps","guidance","width","height","seed"} -> {"image","model"}
//! POST /v1/img2img {"prompt","image","steps","guidance","strength","seed"} -> {"image","model"}
//! POST /v1/detect  {"image"} -> {"detections":[{"label","confidence","bbox":[x,y,w,h]}]}
//! any error        -> 4xx/5xx {"error"}
//! ```
//! Images travel as base64 (standard alphabet, padded) PNG.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::SynthRequest;
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::imaging::{decode_png, encode_png, ImageBuf};
use crate::sampler::{Mode, PromptText};

pub const TXT2IMG_PATH: &str = "/v1/txt2img";
pub const IMG2IMG_PATH: &str = "/v1/img2img";
pub const DETECT_PATH: &str = "/v1/detect";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Txt2ImgBody {
    pub prompt: String,
    pub steps: u32,
    pub guidance: f64,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Img2ImgBody {
    pub prompt: String,
    pub image: String,
    pub steps: u32,
    pub guidance: f64,
    pub strength: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectBody {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub label: String,
    pub confidence: f64,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
}

/// A synthesis request as it appears on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum WireRequest {
    Txt2Img(Txt2ImgBody),
    Img2Img(Img2ImgBody),
}

impl WireRequest {
    pub fn path(&self) -> &'static str {
        match self {
            WireRequest::Txt2Img(_) => TXT2IMG_PATH,
            WireRequest::Img2Img(_) => IMG2IMG_PATH,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(match self {
            WireRequest::Txt2Img(b) => serde_json::to_string(b)?,
            WireRequest::Img2Img(b) => serde_json::to_string(b)?,
        })
    }

    pub fn parse(path: &str, body: &str) -> Result<WireRequest> {
        let bad = |e: serde_json::Error| Error::Protocol(format!("bad {path} body: {e}"));
        match path {
            TXT2IMG_PATH => Ok(WireRequest::Txt2Img(
                serde_json::from_str(body).map_err(bad)?,
            )),
            IMG2IMG_PATH => Ok(WireRequest::Img2Img(
                serde_json::from_str(body).map_err(bad)?,
            )),
            other => Err(Error::Protocol(format!("unknown endpoint {other}"))),
        }
    }
}

pub fn image_to_b64(image: &ImageBuf) -> Result<String> {
    Ok(STANDARD.encode(encode_png(image)?))
}

pub fn image_from_b64(data: &str) -> Result<ImageBuf> {
    let bytes = STANDARD
        .decode(data)
        .map_err(|e| Error::Protocol(format!("image is not valid base64: {e}")))?;
    decode_png(&bytes).map_err(|e| Error::Protocol(format!("image is not a valid PNG: {e}")))
}

impl SynthRequest {
    pub fn to_wire(&self) -> Result<WireRequest> {
        Ok(match self.mode {
            Mode::TextToImage => WireRequest::Txt2Img(Txt2ImgBody {
                prompt: self.prompt.text.clone(),
                steps: self.steps,
                guidance: self.guidance,
                width: self.width,
                height: self.height,
                seed: self.seed,
            }),
            Mode::ImageToImage => {
                let base = self
                    .base_image
                    .as_ref()
                    .ok_or_else(|| Error::Input("image-to-image requires a base image".into()))?;
                WireRequest::Img2Img(Img2ImgBody {
                    prompt: self.prompt.text.clone(),
                    image: image_to_b64(base)?,
                    steps: self.steps,
                    guidance: self.guidance,
                    strength: self.strength.unwrap_or(0.6),
                    seed: self.seed,
                })
            }
        })
    }

    /// Rebuild a request from its wire form. The subject substring is not
    /// transmitted; pass it if known, else the whole prompt is used.
    pub fn from_wire(wire: &WireRequest, subject: Option<&str>) -> Result<SynthRequest> {
        let prompt = |text: &str| PromptText {
            text: text.to_string(),
            subject_substring: subject.unwrap_or(text).to_string(),
        };
        let req = match wire {
            WireRequest::Txt2Img(b) => SynthRequest {
                mode: Mode::TextToImage,
                prompt: prompt(&b.prompt),
                steps: b.steps,
                guidance: b.guidance,
                strength: None,
                width: b.width,
                height: b.height,
                seed: b.seed,
                base_image: None,
            },
            WireRequest::Img2Img(b) => {
                let base = image_from_b64(&b.image)?;
                SynthRequest {
                    mode: Mode::ImageToImage,
                    prompt: prompt(&b.prompt),
                    steps: b.steps,
                    guidance: b.guidance,
                    strength: Some(b.strength),
                    width: base.width(),
                    height: base.height(),
                    seed: b.seed,
                    base_image: Some(base),
                }
            }
        };
        req.validate().map_err(|e| Error::Request(e.to_string()))?;
        Ok(req)
    }
}

impl From<&crate::quality::Detection> for WireDetection {
    fn from(d: &crate::quality::Detection) -> Self {
        WireDetection {
            label: d.label.clone(),
            confidence: d.confidence,
            bbox: d.bbox.into(),
        }
    }
}

impl WireDetection {
    pub fn into_detection(self) -> Result<crate::quality::Detection> {
        crate::quality::Detection::new(self.label, self.confidence, Rect::from(self.bbox))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::ModeParams;

    fn prompt() -> PromptText {
        PromptText {
            text: "a photograph of a gray Volkswagen Golf VII 2015".into(),
            subject_substring: "gray Volkswagen Golf VII 2015".into(),
        }
    }

    #[test]
    fn img2img_defaults_on_the_wire() {
        let base = ImageBuf::filled(16, 16, [50, 50, 50]);
        let req = SynthRequest::image_to_image(
            prompt(),
            ModeParams::defaults(Mode::ImageToImage),
            base,
            3,
        );
        let json: serde_json::Value =
            serde_json::from_str(&req.to_wire().unwrap().to_json().unwrap()).unwrap();
        assert_eq!(json["steps"], 10);
        assert_eq!(json["guidance"], 0.4);
        assert_eq!(json["strength"], 0.6);
        assert!(json.get("width").is_none());
    }

    #[test]
    fn txt2img_field_order_is_fixed() {
        let req =
            SynthRequest::text_to_image(prompt(), ModeParams::defaults(Mode::TextToImage), 720, 42);
        assert_eq!(
            req.to_wire().unwrap().to_json().unwrap(),
            r#"{"prompt":"a photograph of a gray Volkswagen Golf VII 2015","steps":4,"guidance":0.0,"width":720,"height":720,"seed":42}"#
        );
    }

    #[test]
    fn unknown_fields_and_paths_rejected() {
        assert!(WireRequest::parse(
            TXT2IMG_PATH,
            r#"{"prompt":"x","steps":1,"guidance":0,"width":1,"height":1,"seed":0,"extra":1}"#
        )
        .is_err());
        assert!(WireRequest::parse("/v2/txt2img", "{}").is_err());
        assert!(image_from_b64("***").is_err());
    }
}
