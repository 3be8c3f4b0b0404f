//! Balanced, labeled, bbox-annotated synthetic car-brand image datasets.

pub mod catalog;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod metrics;
pub mod orchestrator;
pub mod quality;
pub mod rng;
pub mod sampler;
pub mod synthesis;

pub use error::{Error, Result};
