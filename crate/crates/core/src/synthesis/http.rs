//! Blocking HTTP client for the synthesis and detection endpoints.

use std::time::Duration;

use serde::Serialize;

use super::retry::RetryPolicy;
use super::wire::{self, DetectBody, DetectResponse, ErrorResponse, ImageResponse};
use super::{SynthRequest, SynthesisBackend};
use crate::error::{Error, Result};
use crate::imaging::ImageBuf;
use crate::quality::{Detection, DetectionBackend};

const BODY_LIMIT: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    pub retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post_once(&self, path: &str, body: &impl Serialize) -> Result<String> {
        let url = format!("{}{}", self.base_url, path);
        let mut resp = self.agent.post(&url).send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(BODY_LIMIT)
            .read_to_string()
            .map_err(transport)?;
        match status {
            200..=299 => Ok(text),
            408 | 429 | 500..=599 => Err(Error::Transport(format!(
                "{url}: status {status}: {}",
                error_message(&text)
            ))),
            _ => Err(Error::Request(format!(
                "{url}: status {status}: {}",
                error_message(&text)
            ))),
        }
    }

    fn post(&self, path: &str, body: &impl Serialize) -> Result<String> {
        self.retry
            .run(std::thread::sleep, || self.post_once(path, body))
    }
}

fn transport(e: ureq::Error) -> Error {
    Error::Transport(e.to_string())
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<ErrorResponse>(body)
        .map(|e| e.error)
        .unwrap_or_else(|_| body.chars().take(200).collect())
}

fn parse<T: serde::de::DeserializeOwned>(body: &str) -> Result<T> {
    serde_json::from_str(body)
        .map_err(|e| Error::Protocol(format!("unexpected response body: {e}")))
}

impl SynthesisBackend for HttpBackend {
    fn generate(&self, req: &SynthRequest) -> Result<(ImageBuf, String)> {
        let text = match req.to_wire()? {
            wire::WireRequest::Txt2Img(b) => self.post(wire::TXT2IMG_PATH, &b)?,
            wire::WireRequest::Img2Img(b) => self.post(wire::IMG2IMG_PATH, &b)?,
        };
        let resp: ImageResponse = parse(&text)?;
        Ok((wire::image_from_b64(&resp.image)?, resp.model))
    }

    fn health_check(&self) -> Result<()> {
        let body = wire::Txt2ImgBody {
            prompt: "health check".into(),
            steps: 1,
            guidance: 0.0,
            width: 64,
            height: 64,
            seed: 0,
        };
        let resp: ImageResponse = parse(&self.post(wire::TXT2IMG_PATH, &body)?)?;
        wire::image_from_b64(&resp.image).map(|_| ())
    }
}

impl DetectionBackend for HttpBackend {
    fn detect_raw(&self, image: &ImageBuf) -> Result<Vec<Detection>> {
        let body = DetectBody {
            image: wire::image_to_b64(image)?,
        };
        let resp: DetectResponse = parse(&self.post(wire::DETECT_PATH, &body)?)?;
        resp.detections
            .into_iter()
            .map(|d| {
                d.into_detection()
                    .map_err(|e| Error::Protocol(e.to_string()))
            })
            .collect()
    }

    fn health_check(&self) -> Result<()> {
        self.detect_raw(&ImageBuf::filled(8, 8, [128, 128, 128]))
            .map(|_| ())
    }
}
