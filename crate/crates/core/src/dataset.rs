//! On-disk dataset: line-delimited manifest, per-image label files, stats,
//! validation, and the camera/time split of real evaluation photographs.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! config.json            snapshot of the pipeline config plus digests
//! catalog.csv            the filtered catalog the run sampled from
//! manifest.jsonl         one SampleRecord per line, ids dense from 000000
//! images/<brand>/<id>.png
//! labels/<brand>/<id>.txt
//! run_stats.json         written when a run session ends
//! rejected/<reason>/     only with keep_rejected
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{load_catalog, VehicleCatalog};
use crate::config::{sha256_hex, ConfigSnapshot};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::imaging::decode_png;
use crate::quality::RejectReason;
use crate::sampler::{sample_labels, Balance, Mode};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const CATALOG_FILE: &str = "catalog.csv";
pub const STATS_FILE: &str = "run_stats.json";
pub const IMAGES_DIR: &str = "images";
pub const LABELS_DIR: &str = "labels";
pub const REJECTED_DIR: &str = "rejected";

const SYNC_EVERY: usize = 256;

/// One accepted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub image_path: String,
    pub brand: String,
    pub brand_index: usize,
    pub model: String,
    pub year: i32,
    pub color: String,
    pub mode: Mode,
    pub prompt: String,
    /// Normalized, in the synthesized image before cropping.
    pub bbox: Rect,
    pub gate_score: f64,
    pub backend_model: String,
    pub latency_seconds: f64,
    pub seed: u64,
    /// Verdicts of the attempts this slot discarded before acceptance.
    #[serde(default)]
    pub rejected: Vec<RejectReason>,
}

impl SampleRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }

    pub fn label_path(&self) -> String {
        label_rel_path(&self.brand, &self.id)
    }
}

pub fn format_id(n: usize) -> String {
    format!("{n:06}")
}

fn path_component(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn image_rel_path(brand: &str, id: &str) -> String {
    format!("{IMAGES_DIR}/{}/{id}.png", path_component(brand))
}

pub fn label_rel_path(brand: &str, id: &str) -> String {
    format!("{LABELS_DIR}/{}/{id}.txt", path_component(brand))
}

/// `<brand_index> <cx> <cy> <w> <h>` with a centre-format box at 6 decimals.
pub fn format_label(brand_index: usize, bbox: &Rect) -> String {
    let (cx, cy) = bbox.center();
    format!("{brand_index} {cx:.6} {cy:.6} {:.6} {:.6}", bbox.w, bbox.h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelLine {
    pub class: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl LabelLine {
    pub fn bbox(&self) -> Rect {
        Rect::from_center(self.cx, self.cy, self.w, self.h)
    }
}

pub fn parse_label(line: &str) -> Result<LabelLine> {
    let bad = || Error::Input(format!("malformed label line `{line}`"));
    let fields: Vec<&str> = line.split_whitespace().collect();
    let [class, cx, cy, w, h] = fields.as_slice() else {
        return Err(bad());
    };
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    Ok(LabelLine {
        class: class.parse().map_err(|_| bad())?,
        cx: num(cx)?,
        cy: num(cy)?,
        w: num(w)?,
        h: num(h)?,
    })
}

pub fn write_label_file(record: &SampleRecord) -> String {
    format_label(record.brand_index, &record.bbox) + "\n"
}

fn expect_next_id(count: usize, record: &SampleRecord) -> Result<()> {
    let expected = format_id(count);
    if record.id != expected {
        return Err(Error::Consistency(format!(
            "record id {} appended where {expected} was expected",
            record.id
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub config_snapshot: Option<ConfigSnapshot>,
}

impl DatasetManifest {
    /// In-memory append with the same id contract as [`ManifestWriter::append`].
    pub fn append_record(&mut self, record: SampleRecord) -> Result<()> {
        expect_next_id(self.records.len(), &record)?;
        self.records.push(record);
        Ok(())
    }

    pub fn rejected_counts(&self) -> BTreeMap<RejectReason, u64> {
        rejected_counts(&self.records)
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| r.to_line() + "\n").collect()
    }
}

pub fn rejected_counts(records: &[SampleRecord]) -> BTreeMap<RejectReason, u64> {
    let mut counts: BTreeMap<RejectReason, u64> =
        RejectReason::ALL.iter().map(|r| (*r, 0)).collect();
    for r in records.iter().flat_map(|r| &r.rejected) {
        *counts.entry(*r).or_default() += 1;
    }
    counts
}

/// The single appender of a manifest file. Every record is flushed to the OS
/// before `append` returns, so a killed process leaves at most a torn final line.
pub struct ManifestWriter {
    path: PathBuf,
    out: BufWriter<File>,
    count: usize,
    since_sync: usize,
}

impl ManifestWriter {
    pub fn create(path: &Path) -> Result<ManifestWriter> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(ManifestWriter::wrap(path, file, 0))
    }

    /// Continue a manifest whose first `valid_len` bytes hold `count` complete
    /// records; anything after them (a torn line) is cut off.
    pub fn resume(path: &Path, valid_len: u64, count: usize) -> Result<ManifestWriter> {
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        file.set_len(valid_len).map_err(|e| Error::io(path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(ManifestWriter::wrap(path, file, count))
    }

    fn wrap(path: &Path, file: File, count: usize) -> ManifestWriter {
        ManifestWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            count,
            since_sync: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn append(&mut self, record: &SampleRecord) -> Result<()> {
        expect_next_id(self.count, record)?;
        let mut line = record.to_line();
        line.push('\n');
        let io = |e| Error::io(&self.path, e);
        self.out.write_all(line.as_bytes()).map_err(io)?;
        self.out.flush().map_err(io)?;
        self.count += 1;
        self.since_sync += 1;
        if self.since_sync >= SYNC_EVERY {
            self.out.get_ref().sync_data().map_err(io)?;
            self.since_sync = 0;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        let io = |e| Error::io(&self.path, e);
        self.out.flush().map_err(io)?;
        self.out.get_ref().sync_all().map_err(io)
    }
}

/// Result of scanning a manifest file.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestScan {
    pub records: Vec<SampleRecord>,
    /// Byte length of the complete lines.
    pub valid_len: u64,
    /// An unterminated final line, left by an interrupted write.
    pub torn_tail: Option<String>,
}

/// Parse manifest text. Only the final line may be incomplete; a complete line
/// that fails to parse is a consistency error.
pub fn scan_manifest(text: &str) -> Result<ManifestScan> {
    let mut records = Vec::new();
    let mut valid_len = 0usize;
    let mut rest = text;
    let mut line_no = 0;
    while let Some(end) = rest.find('\n') {
        line_no += 1;
        let line = &rest[..end];
        let record: SampleRecord = serde_json::from_str(line)
            .map_err(|e| Error::Consistency(format!("manifest line {line_no}: {e}")))?;
        records.push(record);
        valid_len += end + 1;
        rest = &rest[end + 1..];
    }
    Ok(ManifestScan {
        records,
        valid_len: valid_len as u64,
        torn_tail: (!rest.is_empty()).then(|| rest.to_string()),
    })
}

pub fn read_manifest(path: &Path) -> Result<ManifestScan> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scan_manifest(&text)
}

/// Snapshot plus manifest of a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, ManifestScan)> {
    let snapshot = ConfigSnapshot::read(&dir.join(CONFIG_FILE))?;
    let scan = read_manifest(&dir.join(MANIFEST_FILE))?;
    let manifest = DatasetManifest {
        records: scan.records.clone(),
        config_snapshot: Some(snapshot),
    };
    Ok((manifest, scan))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total: usize,
    pub per_brand: Vec<(String, usize)>,
    pub per_mode: BTreeMap<Mode, usize>,
    pub per_color: BTreeMap<String, usize>,
    pub rejected: BTreeMap<RejectReason, u64>,
    /// All listed brands have the same count.
    pub balanced: bool,
}

pub fn dataset_stats(records: &[SampleRecord], brands: &[String]) -> DatasetStats {
    let mut per_brand: Vec<(String, usize)> = brands.iter().map(|b| (b.clone(), 0)).collect();
    let mut per_mode: BTreeMap<Mode, usize> = Mode::ALL.iter().map(|m| (*m, 0)).collect();
    let mut per_color = BTreeMap::new();
    for r in records {
        match per_brand.iter_mut().find(|(b, _)| *b == r.brand) {
            Some((_, n)) => *n += 1,
            None => per_brand.push((r.brand.clone(), 1)),
        }
        *per_mode.entry(r.mode).or_default() += 1;
        *per_color.entry(r.color.clone()).or_default() += 1;
    }
    let balanced = per_brand.windows(2).all(|w| w[0].1 == w[1].1);
    DatasetStats {
        total: records.len(),
        per_brand,
        per_mode,
        per_color,
        rejected: rejected_counts(records),
        balanced,
    }
}

impl DatasetStats {
    pub fn render(&self) -> String {
        let mut out = format!("records: {}\n\nbrand         count\n", self.total);
        for (b, n) in &self.per_brand {
            out += &format!("{b:<13} {n:>5}\n");
        }
        out += "\nmode          count\n";
        for (m, n) in &self.per_mode {
            out += &format!("{:<13} {n:>5}\n", m.to_string());
        }
        out += "\ncolor         count\n";
        for (c, n) in &self.per_color {
            out += &format!("{c:<13} {n:>5}\n");
        }
        out += "\nrejected      count\n";
        for (r, n) in &self.rejected {
            out += &format!("{:<13} {n:>5}\n", r.to_string());
        }
        out += &format!("\nbalanced: {}\n", self.balanced);
        out
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ValidationReport {
    pub records: usize,
    pub complete: bool,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Check every dataset invariant against the files on disk. Partial datasets
/// (an interrupted run) are valid as long as what was written is consistent.
pub fn validate_dir(dir: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = validate_into(dir, &mut report, true) {
        report.errors.push(e.to_string());
    }
    report
}

/// Like [`validate_dir`] without decoding images; used before resuming.
pub fn validate_structure(dir: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = validate_into(dir, &mut report, false) {
        report.errors.push(e.to_string());
    }
    report
}

fn validate_into(dir: &Path, report: &mut ValidationReport, check_images: bool) -> Result<()> {
    let snapshot = ConfigSnapshot::read(&dir.join(CONFIG_FILE))?;
    snapshot.verify()?;
    let config = &snapshot.config;

    let catalog_path = dir.join(CATALOG_FILE);
    let catalog_text =
        std::fs::read_to_string(&catalog_path).map_err(|e| Error::io(&catalog_path, e))?;
    if sha256_hex(catalog_text.as_bytes()) != snapshot.catalog_sha256 {
        return Err(Error::Consistency(
            "catalog copy does not match its digest".into(),
        ));
    }
    let (catalog, _) = load_catalog(&catalog_text, &config.catalog.filter())?;
    let labels = sample_labels(&catalog, &config.plan)?;

    let scan = read_manifest(&dir.join(MANIFEST_FILE))?;
    if let Some(tail) = &scan.torn_tail {
        report.warnings.push(format!(
            "manifest ends with an incomplete line of {} bytes (ignored)",
            tail.len()
        ));
    }
    let records = &scan.records;
    report.records = records.len();
    report.complete = records.len() == config.plan.total;
    if records.len() > config.plan.total {
        report.errors.push(format!(
            "{} records exceed the planned total {}",
            records.len(),
            config.plan.total
        ));
    }

    let mut referenced = HashSet::new();
    for (i, r) in records.iter().enumerate() {
        let mut err = |m: String| report.errors.push(format!("record {}: {m}", r.id));
        if r.id != format_id(i) {
            err(format!("id out of sequence, expected {}", format_id(i)));
        }
        check_record(r, &catalog, config.plan.colors.as_slice(), &mut err);
        if let Some(label) = labels.get(i) {
            if (label.brand.as_str(), label.mode) != (r.brand.as_str(), r.mode) {
                err(format!(
                    "slot was planned as {} / {}, record has {} / {}",
                    label.brand, label.mode, r.brand, r.mode
                ));
            }
        }
        if r.image_path != image_rel_path(&r.brand, &r.id) {
            err(format!("unexpected image path {}", r.image_path));
        }
        referenced.insert(PathBuf::from(&r.image_path));
        check_files(dir, r, config.augment.target_size, check_images, &mut err);
    }

    if config.plan.balance == Balance::ExactQuota {
        let quota = config.plan.total / config.catalog.brands.len().max(1);
        let stats = dataset_stats(records, &config.catalog.brands);
        for (brand, n) in &stats.per_brand {
            if *n > quota || (report.complete && *n != quota) {
                report
                    .errors
                    .push(format!("brand {brand} has {n} records, quota is {quota}"));
            }
        }
    }

    for orphan in orphans(dir, &referenced) {
        report.warnings.push(format!(
            "image not referenced by the manifest: {}",
            orphan.display()
        ));
    }
    Ok(())
}

fn check_record(
    r: &SampleRecord,
    catalog: &VehicleCatalog,
    colors: &[String],
    err: &mut impl FnMut(String),
) {
    match catalog.brand_index(&r.brand) {
        Some(i) if i == r.brand_index => {}
        Some(i) => err(format!(
            "brand_index {} but {} is brand {i}",
            r.brand_index, r.brand
        )),
        None => err(format!("brand {} is not configured", r.brand)),
    }
    match catalog.find(&r.brand, &r.model) {
        Some(e) if e.build_years.contains(&r.year) => {}
        Some(_) => err(format!(
            "year {} not built for {} {}",
            r.year, r.brand, r.model
        )),
        None => err(format!("{} {} is not in the catalog", r.brand, r.model)),
    }
    if !colors.contains(&r.color) {
        err(format!("color {} is not configured", r.color));
    }
    if !r.bbox.is_valid() {
        err(format!("invalid bbox {:?}", r.bbox));
    }
    if !(0.0..=1.0).contains(&r.gate_score) {
        err(format!("gate score {} outside [0,1]", r.gate_score));
    }
    if r.latency_seconds.is_nan() || r.latency_seconds < 0.0 {
        err(format!("negative latency {}", r.latency_seconds));
    }
}

fn check_files(
    dir: &Path,
    r: &SampleRecord,
    target: usize,
    check_images: bool,
    err: &mut impl FnMut(String),
) {
    let image = dir.join(&r.image_path);
    match std::fs::read(&image) {
        Err(e) => err(format!("image {}: {e}", r.image_path)),
        Ok(bytes) if check_images => match decode_png(&bytes) {
            Ok(img) if (img.width(), img.height()) == (target, target) => {}
            Ok(img) => err(format!(
                "image is {}x{}, expected {target}x{target}",
                img.width(),
                img.height()
            )),
            Err(e) => err(format!("image {}: {e}", r.image_path)),
        },
        Ok(_) => {}
    }
    let label = dir.join(r.label_path());
    match std::fs::read_to_string(&label) {
        Ok(text) if text == write_label_file(r) => {}
        Ok(_) => err("label file disagrees with the manifest".into()),
        Err(e) => err(format!("label {}: {e}", r.label_path())),
    }
}

fn orphans(dir: &Path, referenced: &HashSet<PathBuf>) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let Ok(brands) = std::fs::read_dir(dir.join(IMAGES_DIR)) else {
        return out;
    };
    for brand in brands.flatten() {
        let Ok(files) = std::fs::read_dir(brand.path()) else {
            continue;
        };
        for f in files.flatten() {
            let rel = PathBuf::from(IMAGES_DIR)
                .join(brand.file_name())
                .join(f.file_name());
            if !referenced.contains(&rel) {
                out.push(rel);
            }
        }
    }
    out.sort();
    out
}

/// A labeled real photograph used for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealSample {
    pub image_path: String,
    pub brand: String,
    pub camera_id: String,
    /// UTC seconds.
    pub recorded_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketAssignment {
    pub camera_id: String,
    pub bucket: i64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRuleDoc {
    #[serde(default = "default_bucket_seconds")]
    pub bucket_seconds: i64,
    pub assignment: Vec<BucketAssignment>,
}

fn default_bucket_seconds() -> i64 {
    3600
}

/// Maps each (camera, time bucket) to one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRule {
    pub assignment: BTreeMap<(String, i64), Split>,
    pub bucket_seconds: i64,
}

impl SplitRule {
    pub fn from_doc(doc: SplitRuleDoc) -> Result<SplitRule> {
        if doc.bucket_seconds <= 0 {
            return Err(Error::Config("bucket_seconds must be positive".into()));
        }
        let mut assignment = BTreeMap::new();
        for a in doc.assignment {
            let key = (a.camera_id, a.bucket);
            if let Some(prev) = assignment.insert(key.clone(), a.split) {
                if prev != a.split {
                    return Err(Error::Config(format!(
                        "camera {} bucket {} is assigned to both splits",
                        key.0, key.1
                    )));
                }
            }
        }
        Ok(SplitRule {
            assignment,
            bucket_seconds: doc.bucket_seconds,
        })
    }

    pub fn from_json(text: &str) -> Result<SplitRule> {
        let doc: SplitRuleDoc =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("split rule: {e}")))?;
        SplitRule::from_doc(doc)
    }

    pub fn bucket(&self, recorded_at: i64) -> i64 {
        recorded_at.div_euclid(self.bucket_seconds)
    }
}

pub fn load_real_samples(text: &str) -> Result<Vec<RealSample>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                row: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitResult {
    pub validation: Vec<RealSample>,
    pub test: Vec<RealSample>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRow {
    pub brand: String,
    pub validation: usize,
    pub test: usize,
}

impl SplitResult {
    pub fn distribution(&self, brands: &[String]) -> Vec<SplitRow> {
        let count = |set: &[RealSample], b: &str| set.iter().filter(|s| s.brand == b).count();
        brands
            .iter()
            .map(|b| SplitRow {
                brand: b.clone(),
                validation: count(&self.validation, b),
                test: count(&self.test, b),
            })
            .collect()
    }
}

pub fn render_split_table(rows: &[SplitRow]) -> String {
    let mut out = format!("{:<12} {:>10} {:>6}\n", "Brand", "Validation", "Test");
    for r in rows {
        out += &format!("{:<12} {:>10} {:>6}\n", r.brand, r.validation, r.test);
    }
    out
}

/// Partition real samples by the split their (camera, bucket) is assigned to.
pub fn split_real(
    samples: &[RealSample],
    rule: &SplitRule,
    brands: &[String],
) -> Result<SplitResult> {
    let mut missing = BTreeSet::new();
    let mut out = SplitResult::default();
    for (i, s) in samples.iter().enumerate() {
        if !brands.contains(&s.brand) {
            return Err(Error::Input(format!(
                "sample {} ({}) has unknown brand {}",
                i + 1,
                s.image_path,
                s.brand
            )));
        }
        let key = (s.camera_id.clone(), rule.bucket(s.recorded_at));
        match rule.assignment.get(&key) {
            Some(Split::Validation) => out.validation.push(s.clone()),
            Some(Split::Test) => out.test.push(s.clone()),
            None => {
                missing.insert(key);
            }
        }
    }
    if !missing.is_empty() {
        let keys: Vec<String> = missing.iter().map(|(c, b)| format!("{c}@{b}")).collect();
        return Err(Error::Config(format!(
            "unassigned camera/bucket keys: {}",
            keys.join(", ")
        )));
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn record(i: usize) -> SampleRecord {
        super::tests::record(i, "Volkswagen")
    }
}
