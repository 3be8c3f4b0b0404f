//! The pipeline configuration document and its on-disk snapshot.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{CatalogFilter, DEFAULT_BRANDS, DEFAULT_MIN_YEAR};
use crate::error::{Error, Result};
use crate::imaging::AugmentConfig;
use crate::quality::{DetectorKind, GateConfig};
use crate::sampler::{check_template, Mode, SamplePlan, DEFAULT_TEMPLATE};
use crate::synthesis::mock::FaultProfile;
use crate::synthesis::{ModeParams, DEFAULT_PADDING_FRACTION, DEFAULT_SIZE};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    pub path: Option<PathBuf>,
    pub brands: Vec<String>,
    pub min_year: i32,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            path: None,
            brands: DEFAULT_BRANDS.iter().map(|s| s.to_string()).collect(),
            min_year: DEFAULT_MIN_YEAR,
        }
    }
}

impl CatalogConfig {
    pub fn filter(&self) -> CatalogFilter {
        CatalogFilter {
            brand_whitelist: self.brands.clone(),
            min_year: self.min_year,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub backend: BackendKind,
    pub url: Option<String>,
    pub size: usize,
    pub timeout_secs: f64,
    /// Mock backend only.
    pub fault: FaultProfile,
    pub text_to_image: ModeParams,
    pub image_to_image: ModeParams,
    /// JSON listing of base photographs; procedural scenes when absent.
    pub base_pool: Option<PathBuf>,
    pub padding_fraction: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            backend: BackendKind::Mock,
            url: None,
            size: DEFAULT_SIZE,
            timeout_secs: 120.0,
            fault: FaultProfile::default(),
            text_to_image: ModeParams::defaults(Mode::TextToImage),
            image_to_image: ModeParams::defaults(Mode::ImageToImage),
            base_pool: None,
            padding_fraction: DEFAULT_PADDING_FRACTION,
        }
    }
}

impl SynthesisConfig {
    pub fn params(&self, mode: Mode) -> ModeParams {
        match mode {
            Mode::TextToImage => self.text_to_image,
            Mode::ImageToImage => self.image_to_image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// Defaults to the synthesis URL.
    pub url: Option<String>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kind: DetectorKind::MockOracle,
            url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub catalog: CatalogConfig,
    pub plan: SamplePlan,
    pub template: String,
    pub synthesis: SynthesisConfig,
    pub gate: GateConfig,
    pub detector: DetectorConfig,
    pub augment: AugmentConfig,
    pub output: PathBuf,
    pub workers: usize,
    pub max_attempts_per_slot: usize,
    pub keep_rejected: bool,
    /// Record latencies as zero so repeated runs produce identical manifests.
    pub deterministic_timing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            catalog: CatalogConfig::default(),
            plan: SamplePlan::default(),
            template: DEFAULT_TEMPLATE.to_string(),
            synthesis: SynthesisConfig::default(),
            gate: GateConfig::default(),
            detector: DetectorConfig::default(),
            augment: AugmentConfig::default(),
            output: PathBuf::from("dataset"),
            workers: 1,
            max_attempts_per_slot: 10,
            keep_rejected: false,
            deterministic_timing: false,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_json(&text)
    }

    /// Checks that do not need the catalog.
    pub fn validate(&self) -> Result<()> {
        if self.catalog.brands.is_empty() {
            return Err(Error::Config("brand list is empty".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.max_attempts_per_slot == 0 {
            return Err(Error::Config(
                "max attempts per slot must be at least 1".into(),
            ));
        }
        if self.synthesis.size == 0 {
            return Err(Error::Config("synthesis size must be positive".into()));
        }
        if self.synthesis.timeout_secs.is_nan() || self.synthesis.timeout_secs <= 0.0 {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if self.synthesis.backend == BackendKind::Http && self.synthesis.url.is_none() {
            return Err(Error::Config("http backend needs a URL".into()));
        }
        if self.detector.kind == DetectorKind::Http
            && self.detector.url.is_none()
            && self.synthesis.url.is_none()
        {
            return Err(Error::Config("http detector needs a URL".into()));
        }
        if self.synthesis.padding_fraction.is_nan() || self.synthesis.padding_fraction < 0.0 {
            return Err(Error::Config(
                "padding fraction must be non-negative".into(),
            ));
        }
        self.synthesis.fault.validate()?;
        self.gate.validate()?;
        self.augment.validate()?;
        self.plan.mode_mix.validate()?;
        check_template(&self.template)?;
        Ok(())
    }

    pub fn catalog_path(&self) -> Result<&Path> {
        self.catalog
            .path
            .as_deref()
            .ok_or_else(|| Error::Config("no catalog path configured".into()))
    }

    /// Digest of every field that shapes the dataset. Worker count and output
    /// location are excluded: they never change what gets written.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.workers = 1;
        c.output = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("plain data").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// The `config.json` document written next to a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSnapshot {
    pub version: u32,
    pub config: PipelineConfig,
    pub config_sha256: String,
    pub catalog_sha256: String,
}

impl ConfigSnapshot {
    pub fn new(config: &PipelineConfig, catalog_text: &str) -> ConfigSnapshot {
        ConfigSnapshot {
            version: SNAPSHOT_VERSION,
            config: config.clone(),
            config_sha256: config.fingerprint(),
            catalog_sha256: sha256_hex(catalog_text.as_bytes()),
        }
    }

    /// Refuses snapshots whose recorded digest no longer matches their content.
    pub fn verify(&self) -> Result<()> {
        if self.version != SNAPSHOT_VERSION {
            return Err(Error::Consistency(format!(
                "snapshot version {} is not supported",
                self.version
            )));
        }
        if self.config.fingerprint() != self.config_sha256 {
            return Err(Error::Consistency(
                "config snapshot digest mismatch: the snapshot was edited".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data") + "\n"
    }

    pub fn read(path: &Path) -> Result<ConfigSnapshot> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Consistency(format!("{}: {e}", path.display())))
    }
}
