//! End-to-end driver: sample → prompt → synthesize → gate → crop/augment →
//! persist, with quota-preserving redraws and resumable output.
//!
//! Every slot of the label plan is processed by a pure function of
//! `(config, slot)`: its synthesis seeds, base-image picks and redraws come
//! from RNG stream `slot + 1` (stream 0 belongs to the sampler). Slots run in
//! waves across the worker pool and are written in slot order by a single
//! writer, so record `id` always equals the slot index and the output is the
//! same for every worker count.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::catalog::{load_catalog, VehicleCatalog};
use crate::config::{BackendKind, ConfigSnapshot, PipelineConfig};
use crate::dataset::{
    self, format_id, image_rel_path, rejected_counts, validate_structure, write_label_file,
    DatasetManifest, ManifestWriter, SampleRecord,
};
use crate::error::{Error, Result};
use crate::imaging::{augment, encode_png};
use crate::metrics::{throughput_report, ThroughputReport};
use crate::quality::{
    assess, crop_to_bbox, detect, BlobDetector, DetectionBackend, DetectorKind, GateDecision,
    OracleDetector, RejectReason,
};
use crate::rng::DetRng;
use crate::sampler::{build_prompt, redraw_within_brand, sample_labels, LabelSpec, Mode};
use crate::synthesis::http::HttpBackend;
use crate::synthesis::mock::MockBackend;
use crate::synthesis::{synthesize, BasePool, SynthRequest, SynthesisBackend};

const PROGRESS_EVERY: usize = 100;
const PROCEDURAL_POOL: usize = 8;

/// Maps slots to results, on a rayon pool when more than one worker is configured.
pub enum Executor {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel(rayon::ThreadPool),
}

impl Executor {
    pub fn new(workers: usize) -> Result<Executor> {
        #[cfg(feature = "parallel")]
        if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
            return Ok(Executor::Parallel(pool));
        }
        let _ = workers;
        Ok(Executor::Sequential)
    }

    /// Results come back in slot order regardless of completion order.
    pub fn map<T, F>(&self, slots: Range<usize>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Executor::Sequential => slots.map(f).collect(),
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => {
                use rayon::prelude::*;
                pool.install(|| slots.into_par_iter().map(f).collect())
            }
        }
    }

    pub fn workers(&self) -> usize {
        match self {
            Executor::Sequential => 1,
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => pool.current_num_threads(),
        }
    }
}

pub struct Backends {
    pub synth: Box<dyn SynthesisBackend>,
    pub detector: Box<dyn DetectionBackend>,
}

impl Backends {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Backends> {
        let timeout = Duration::from_secs_f64(cfg.synthesis.timeout_secs);
        let synth: Box<dyn SynthesisBackend> = match cfg.synthesis.backend {
            BackendKind::Mock => Box::new(MockBackend::new(cfg.synthesis.fault)),
            BackendKind::Http => {
                let url = cfg
                    .synthesis
                    .url
                    .as_deref()
                    .ok_or_else(|| Error::Config("http backend needs a URL".into()))?;
                Box::new(HttpBackend::new(url, timeout))
            }
        };
        let detector: Box<dyn DetectionBackend> = match cfg.detector.kind {
            DetectorKind::MockOracle => Box::new(OracleDetector),
            DetectorKind::MockBlob => Box::new(BlobDetector::default()),
            DetectorKind::Http => {
                let url = cfg
                    .detector
                    .url
                    .as_deref()
                    .or(cfg.synthesis.url.as_deref())
                    .ok_or_else(|| Error::Config("http detector needs a URL".into()))?;
                Box::new(HttpBackend::new(url, timeout))
            }
        };
        Ok(Backends { synth, detector })
    }

    /// One trivial request per backend before any work starts.
    pub fn health_check(&self) -> Result<()> {
        self.synth.health_check()?;
        self.detector.health_check()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop (as if killed) once the manifest holds this many records.
    pub stop_after: Option<usize>,
    /// Print a progress line to stderr every 100 accepted images.
    pub progress: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub accepted: usize,
    pub rejected: BTreeMap<RejectReason, u64>,
    pub attempts: u64,
    /// Wall time of the session that wrote these stats.
    pub wall_seconds: f64,
    pub mean_latency_seconds: BTreeMap<Mode, f64>,
    pub throughput: ThroughputReport,
}

impl RunStats {
    fn compute(records: &[SampleRecord], extra: &[RejectReason], wall_seconds: f64) -> RunStats {
        let mut rejected = rejected_counts(records);
        for r in extra {
            *rejected.entry(*r).or_default() += 1;
        }
        let throughput = throughput_report(records, Some(wall_seconds));
        RunStats {
            accepted: records.len(),
            attempts: records.len() as u64 + rejected.values().sum::<u64>(),
            rejected,
            wall_seconds,
            mean_latency_seconds: throughput
                .per_mode
                .iter()
                .map(|m| (m.mode, m.mean_seconds_per_image))
                .collect(),
            throughput,
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "accepted {}  attempts {}  wall {:.2}s\n",
            self.accepted, self.attempts, self.wall_seconds
        );
        for (r, n) in &self.rejected {
            out += &format!("  rejected {r}: {n}\n");
        }
        for (m, s) in &self.mean_latency_seconds {
            out += &format!("  mean latency {m}: {s:.3}s\n");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: DatasetManifest,
    pub stats: RunStats,
}

struct SlotOutput {
    record: SampleRecord,
    png: Vec<u8>,
    rejected_images: Vec<(RejectReason, Vec<u8>)>,
}

struct SlotFailure {
    error: Error,
    rejected: Vec<RejectReason>,
}

struct Pipeline<'a> {
    cfg: &'a PipelineConfig,
    catalog: &'a VehicleCatalog,
    pool: Option<&'a BasePool>,
    backends: &'a Backends,
}

impl Pipeline<'_> {
    fn request(&self, label: &LabelSpec, rng: &mut DetRng) -> Result<SynthRequest> {
        let prompt = build_prompt(label, &self.cfg.template)?;
        let seed = rng.next_u64();
        let params = self.cfg.synthesis.params(label.mode);
        Ok(match label.mode {
            Mode::TextToImage => {
                SynthRequest::text_to_image(prompt, params, self.cfg.synthesis.size, seed)
            }
            Mode::ImageToImage => {
                let pool = self
                    .pool
                    .ok_or_else(|| Error::Config("image-to-image needs a base pool".into()))?;
                let (base, _) = &pool.images[rng.index(pool.images.len())];
                SynthRequest::image_to_image(prompt, params, base.clone(), seed)
            }
        })
    }

    /// Synthesize until the gate accepts, redrawing model/year/color within the
    /// slot's brand and mode after every rejection.
    fn process(
        &self,
        slot: usize,
        planned: &LabelSpec,
    ) -> std::result::Result<SlotOutput, SlotFailure> {
        let cfg = self.cfg;
        let mut rng = DetRng::new(cfg.plan.seed, slot as u64 + 1);
        let mut label = planned.clone();
        let mut rejected = Vec::new();
        let mut rejected_images = Vec::new();
        let mut tried = Vec::new();
        let fail = |error: Error, rejected: &Vec<RejectReason>| SlotFailure {
            error,
            rejected: rejected.clone(),
        };
        for _ in 0..cfg.max_attempts_per_slot {
            let req = self
                .request(&label, &mut rng)
                .map_err(|e| fail(e, &rejected))?;
            let (image, info) =
                synthesize(self.backends.synth.as_ref(), &req).map_err(|e| fail(e, &rejected))?;
            let detections =
                detect(self.backends.detector.as_ref(), &image).map_err(|e| fail(e, &rejected))?;
            let verdict = match assess(&detections, &cfg.gate) {
                GateDecision::Accept { bbox, score } => match crop_to_bbox(&image, &bbox) {
                    Ok(crop) => Ok((bbox, score, crop)),
                    Err(Error::Input(m)) => {
                        log::warn!("slot {slot}: degenerate bbox, rejecting as no_car: {m}");
                        Err(RejectReason::NoCar)
                    }
                    Err(e) => return Err(fail(e, &rejected)),
                },
                GateDecision::Reject { reason } => Err(reason),
            };
            match verdict {
                Ok((bbox, gate_score, crop)) => {
                    let png = augment(&crop, &cfg.augment, slot as u64)
                        .and_then(|img| encode_png(&img))
                        .map_err(|e| fail(e, &rejected))?;
                    let id = format_id(slot);
                    let record = SampleRecord {
                        image_path: image_rel_path(&label.brand, &id),
                        id,
                        brand_index: self.catalog.brand_index(&label.brand).unwrap_or_default(),
                        brand: label.brand,
                        model: label.model,
                        year: label.year,
                        color: label.color,
                        mode: label.mode,
                        prompt: req.prompt.text,
                        bbox,
                        gate_score,
                        backend_model: info.model_name,
                        latency_seconds: if cfg.deterministic_timing {
                            0.0
                        } else {
                            info.latency_seconds
                        },
                        seed: req.seed,
                        rejected,
                    };
                    return Ok(SlotOutput {
                        record,
                        png,
                        rejected_images,
                    });
                }
                Err(reason) => {
                    log::debug!(
                        "slot {slot}: {} {} rejected: {reason}",
                        label.brand,
                        label.model
                    );
                    if cfg.keep_rejected {
                        let mut raw = image;
                        raw.metadata.clear();
                        let png = encode_png(&raw).map_err(|e| fail(e, &rejected))?;
                        rejected_images.push((reason, png));
                    }
                    rejected.push(reason);
                    tried.push(label.model.clone());
                    label = redraw_within_brand(self.catalog, &label, &cfg.plan.colors, &mut rng);
                }
            }
        }
        let mut by_model: BTreeMap<&str, usize> = BTreeMap::new();
        for m in &tried {
            *by_model.entry(m.as_str()).or_default() += 1;
        }
        let models: Vec<String> = by_model.iter().map(|(m, n)| format!("{m} x{n}")).collect();
        let mut reasons: BTreeMap<RejectReason, usize> = BTreeMap::new();
        for r in &rejected {
            *reasons.entry(*r).or_default() += 1;
        }
        let reasons: Vec<String> = reasons.iter().map(|(r, n)| format!("{r} {n}")).collect();
        Err(SlotFailure {
            error: Error::Quota(format!(
                "slot {slot} ({} / {}) rejected {} times; models tried: {}; reasons: {}",
                planned.brand,
                planned.mode,
                rejected.len(),
                models.join(", "),
                reasons.join(", ")
            )),
            rejected,
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    let parent = path.parent().expect("dataset paths have a parent");
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))
}

/// Image and label go to disk before the manifest line that references them.
fn persist(dir: &Path, out: &SlotOutput, writer: &mut ManifestWriter) -> Result<()> {
    let r = &out.record;
    let image = dir.join(&r.image_path);
    ensure_parent(&image)?;
    write_atomic(&image, &out.png)?;
    let label = dir.join(r.label_path());
    ensure_parent(&label)?;
    write_atomic(&label, write_label_file(r).as_bytes())?;
    for (k, (reason, png)) in out.rejected_images.iter().enumerate() {
        let path = dir
            .join(dataset::REJECTED_DIR)
            .join(reason.to_string())
            .join(format!("{}-{k}.png", r.id));
        ensure_parent(&path)?;
        write_atomic(&path, png)?;
    }
    writer.append(r)
}

fn write_stats(dir: &Path, stats: &RunStats) -> Result<()> {
    let path = dir.join(dataset::STATS_FILE);
    let text = serde_json::to_string_pretty(stats)? + "\n";
    write_atomic(&path, text.as_bytes())
}

fn load_pool(cfg: &PipelineConfig, catalog: &VehicleCatalog) -> Result<Option<BasePool>> {
    if cfg.plan.mode_mix.image_to_image <= 0.0 {
        return Ok(None);
    }
    Ok(Some(match &cfg.synthesis.base_pool {
        Some(listing) => BasePool::load(
            listing,
            &catalog.brand_whitelist,
            cfg.synthesis.padding_fraction,
            cfg.synthesis.size,
        )?,
        None => BasePool::procedural(cfg.synthesis.size, PROCEDURAL_POOL),
    }))
}

/// Start a fresh run into `cfg.output`, which must not already hold a manifest.
pub fn run(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let backends = Backends::from_config(cfg)?;
    run_with(cfg, &backends, opts)
}

/// [`run`] with caller-supplied backends.
pub fn run_with(
    cfg: &PipelineConfig,
    backends: &Backends,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let path = cfg.catalog_path()?;
    let catalog_text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (catalog, drops) = load_catalog(&catalog_text, &cfg.catalog.filter())?;
    log::info!(
        "catalog: {} entries ({} rows outside the brand list, {} without years >= {})",
        catalog.entries.len(),
        drops.brand_filtered,
        drops.year_filtered,
        cfg.catalog.min_year
    );
    cfg.plan.validate(&catalog)?;

    let dir = &cfg.output;
    if dir.join(dataset::MANIFEST_FILE).exists() {
        return Err(Error::Config(format!(
            "{} already holds a dataset; resume it or choose another output",
            dir.display()
        )));
    }
    backends.health_check()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(dataset::CATALOG_FILE), catalog_text.as_bytes())?;
    let snapshot = ConfigSnapshot::new(cfg, &catalog_text);
    write_atomic(
        &dir.join(dataset::CONFIG_FILE),
        snapshot.to_json().as_bytes(),
    )?;
    let writer = ManifestWriter::create(&dir.join(dataset::MANIFEST_FILE))?;
    drive(cfg, &catalog, backends, writer, Vec::new(), snapshot, opts)
}

/// Continue an interrupted run in `dir`. With `expected`, the snapshot must
/// describe the same dataset (worker count may differ).
pub fn resume(
    dir: &Path,
    expected: Option<&PipelineConfig>,
    workers: Option<usize>,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let snapshot = ConfigSnapshot::read(&dir.join(dataset::CONFIG_FILE))?;
    snapshot.verify()?;
    let mut cfg = snapshot.config.clone();
    if let Some(exp) = expected {
        if exp.fingerprint() != snapshot.config_sha256 {
            return Err(Error::Consistency(format!(
                "refusing to resume {}: its config snapshot differs from the given config",
                dir.display()
            )));
        }
        cfg.workers = exp.workers;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.output = dir.to_path_buf();
    cfg.validate()?;
    let backends = Backends::from_config(&cfg)?;
    resume_with(&cfg, &backends, opts)
}

/// [`resume`] with caller-supplied backends; `cfg.output` names the directory.
pub fn resume_with(
    cfg: &PipelineConfig,
    backends: &Backends,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let dir = &cfg.output;
    let snapshot = ConfigSnapshot::read(&dir.join(dataset::CONFIG_FILE))?;
    snapshot.verify()?;
    if cfg.fingerprint() != snapshot.config_sha256 {
        return Err(Error::Consistency(format!(
            "refusing to resume {}: config does not match the snapshot",
            dir.display()
        )));
    }
    let report = validate_structure(dir);
    if !report.ok() {
        let shown: Vec<&str> = report.errors.iter().take(5).map(String::as_str).collect();
        return Err(Error::Consistency(format!(
            "refusing to resume {}: {} problem(s): {}",
            dir.display(),
            report.errors.len(),
            shown.join("; ")
        )));
    }
    let catalog_text = fs::read_to_string(dir.join(dataset::CATALOG_FILE))
        .map_err(|e| Error::io(dir.join(dataset::CATALOG_FILE), e))?;
    let (catalog, _) = load_catalog(&catalog_text, &cfg.catalog.filter())?;
    let scan = dataset::read_manifest(&dir.join(dataset::MANIFEST_FILE))?;
    if scan.torn_tail.is_some() {
        log::warn!("dropping an incomplete final manifest line");
    }
    if scan.records.len() < cfg.plan.total {
        backends.health_check()?;
    }
    let writer = ManifestWriter::resume(
        &dir.join(dataset::MANIFEST_FILE),
        scan.valid_len,
        scan.records.len(),
    )?;
    drive(
        cfg,
        &catalog,
        backends,
        writer,
        scan.records,
        snapshot,
        opts,
    )
}

fn drive(
    cfg: &PipelineConfig,
    catalog: &VehicleCatalog,
    backends: &Backends,
    mut writer: ManifestWriter,
    mut records: Vec<SampleRecord>,
    snapshot: ConfigSnapshot,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let dir: PathBuf = cfg.output.clone();
    let labels = sample_labels(catalog, &cfg.plan)?;
    let pool = load_pool(cfg, catalog)?;
    let pipeline = Pipeline {
        cfg,
        catalog,
        pool: pool.as_ref(),
        backends,
    };
    let executor = Executor::new(cfg.workers)?;
    let wave = executor.workers() * 4;
    let limit = opts.stop_after.unwrap_or(usize::MAX).min(labels.len());
    let mut next_progress = (records.len() / PROGRESS_EVERY + 1) * PROGRESS_EVERY;

    let mut slot = writer.len();
    while slot < limit {
        let end = (slot + wave).min(limit);
        let results = executor.map(slot..end, |s| pipeline.process(s, &labels[s]));
        for result in results {
            match result {
                Ok(out) => {
                    persist(&dir, &out, &mut writer)?;
                    records.push(out.record);
                }
                Err(failure) => {
                    writer.finish()?;
                    let stats = RunStats::compute(
                        &records,
                        &failure.rejected,
                        started.elapsed().as_secs_f64(),
                    );
                    write_stats(&dir, &stats)?;
                    return Err(failure.error);
                }
            }
            if opts.progress && records.len() >= next_progress {
                let rejected: usize = records.iter().map(|r| r.rejected.len()).sum();
                eprintln!(
                    "accepted {}/{}  rejected {}  {:.1}s",
                    records.len(),
                    labels.len(),
                    rejected,
                    started.elapsed().as_secs_f64()
                );
                next_progress += PROGRESS_EVERY;
            }
        }
        slot = end;
    }
    writer.finish()?;
    if records.len() < labels.len() {
        return Err(Error::Interrupted {
            written: records.len(),
        });
    }
    let stats = RunStats::compute(&records, &[], started.elapsed().as_secs_f64());
    write_stats(&dir, &stats)?;
    Ok(RunOutcome {
        manifest: DatasetManifest {
            records,
            config_snapshot: Some(snapshot),
        },
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{Balance, ModeMix};
    use crate::synthesis::mock::FaultProfile;

    fn config(dir: &Path, total: usize) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.catalog.path = Some(PathBuf::from(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/catalog_sample.csv"
        )));
        c.plan.total = total;
        c.synthesis.size = 96;
        c.output = dir.to_path_buf();
        c.deterministic_timing = true;
        c
    }

    #[test]
    fn clean_quota_run() {
        let tmp = tempfile::tempdir().unwrap();
        let out = run(&config(tmp.path(), 16), &RunOptions::default()).unwrap();
        assert_eq!(out.stats.accepted, 16);
        assert_eq!(out.stats.attempts, 16);
        let report = dataset::validate_dir(tmp.path());
        assert!(report.ok() && report.complete, "{report:?}");
    }

    #[test]
    fn refuses_to_overwrite() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config(tmp.path(), 8);
        run(&cfg, &RunOptions::default()).unwrap();
        assert!(matches!(
            run(&cfg, &RunOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn exhausted_slot_is_quota_failure() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = config(tmp.path(), 8);
        cfg.synthesis.fault = FaultProfile {
            p_zero_cars: 1.0,
            p_two_cars: 0.0,
        };
        cfg.max_attempts_per_slot = 3;
        let err = run(&cfg, &RunOptions::default()).unwrap_err();
        let Error::Quota(msg) = &err else {
            panic!("{err}")
        };
        assert!(msg.contains("no_car 3"), "{msg}");
        let stats: RunStats = serde_json::from_str(
            &fs::read_to_string(tmp.path().join(dataset::STATS_FILE)).unwrap(),
        )
        .unwrap();
        assert_eq!(stats.attempts, 3);
        assert!(dataset::validate_dir(tmp.path()).ok());
    }

    #[test]
    fn stop_and_resume_matches_uninterrupted() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut cfg = config(a.path(), 24);
        cfg.synthesis.fault = FaultProfile {
            p_zero_cars: 0.2,
            p_two_cars: 0.2,
        };
        cfg.plan.balance = Balance::ExactQuota;
        cfg.plan.mode_mix = ModeMix::default();
        run(&cfg, &RunOptions::default()).unwrap();

        let mut cfg_b = cfg.clone();
        cfg_b.output = b.path().to_path_buf();
        let stop = RunOptions {
            stop_after: Some(9),
            ..Default::default()
        };
        assert!(matches!(
            run(&cfg_b, &stop),
            Err(Error::Interrupted { written: 9 })
        ));
        assert!(dataset::validate_dir(b.path()).ok());
        cfg_b.workers = 3;
        resume(b.path(), None, Some(3), &RunOptions::default()).unwrap();
        let read = |d: &Path| fs::read(d.join(dataset::MANIFEST_FILE)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn resume_of_complete_run_is_noop() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config(tmp.path(), 8);
        run(&cfg, &RunOptions::default()).unwrap();
        let before = fs::read(tmp.path().join(dataset::MANIFEST_FILE)).unwrap();
        let out = resume(tmp.path(), Some(&cfg), None, &RunOptions::default()).unwrap();
        assert_eq!(out.stats.accepted, 8);
        assert_eq!(
            fs::read(tmp.path().join(dataset::MANIFEST_FILE)).unwrap(),
            before
        );
    }

    #[test]
    fn resume_with_other_config_refused() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config(tmp.path(), 8);
        run(
            &cfg,
            &RunOptions {
                stop_after: Some(3),
                ..Default::default()
            },
        )
        .unwrap_err();
        let mut other = cfg.clone();
        other.plan.seed = 1;
        assert!(matches!(
            resume(tmp.path(), Some(&other), None, &RunOptions::default()),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn keep_rejected_stores_images() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = config(tmp.path(), 16);
        cfg.keep_rejected = true;
        cfg.synthesis.fault = FaultProfile {
            p_zero_cars: 0.0,
            p_two_cars: 0.5,
        };
        let out = run(&cfg, &RunOptions::default()).unwrap();
        let n = out.stats.rejected[&RejectReason::MultipleCars] as usize;
        assert!(n > 0);
        let stored = fs::read_dir(tmp.path().join("rejected/multiple_cars"))
            .unwrap()
            .count();
        assert_eq!(stored, n);
    }
}
