#![allow(dead_code)]

use std::path::{Path, PathBuf};

use synthset::catalog::{load_catalog_file, CatalogFilter, VehicleCatalog};
use synthset::config::PipelineConfig;
use synthset::sampler::PromptText;
use synthset::synthesis::mock::FaultProfile;

pub const FAULTY: FaultProfile = FaultProfile {
    p_zero_cars: 0.1,
    p_two_cars: 0.2,
};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn catalog() -> VehicleCatalog {
    load_catalog_file(&fixture("catalog_sample.csv"), &CatalogFilter::default())
        .unwrap()
        .0
}

pub fn brands() -> Vec<String> {
    catalog().brand_whitelist
}

/// Small, fast, byte-reproducible pipeline config writing into `dir`.
pub fn config(dir: &Path, total: usize) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.catalog.path = Some(fixture("catalog_sample.csv"));
    c.plan.total = total;
    c.synthesis.size = 96;
    c.output = dir.to_path_buf();
    c.deterministic_timing = true;
    c
}

pub fn prompt(subject: &str) -> PromptText {
    PromptText {
        text: format!("a photograph of a {subject}"),
        subject_substring: subject.to_string(),
    }
}

/// Binomial z-score of `hits` out of `n` against probability `p`.
pub fn z_score(hits: usize, n: usize, p: f64) -> f64 {
    let n = n as f64;
    (hits as f64 - n * p) / (n * p * (1.0 - p)).sqrt()
}

/// Pearson statistic of `observed` against equal expected counts, and the
/// 0.999 critical value for its degrees of freedom.
pub fn chi_square_uniform(observed: &[usize]) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: usize = observed.iter().sum();
    let expected = n as f64 / observed.len() as f64;
    let stat = observed
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    let df = (observed.len() - 1) as f64;
    (stat, ChiSquared::new(df).unwrap().inverse_cdf(0.999))
}
