//! End-to-end runs of the orchestrator with the mock backend.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use proptest::prelude::*;

use synthset::dataset::{self, load_dataset, validate_dir, DatasetStats, SampleRecord};
use synthset::error::Error;
use synthset::orchestrator::{self, RunOptions, RunStats};
use synthset::quality::RejectReason;
use synthset::sampler::{sample_labels, Balance, Mode};
use synthset::synthesis::mock::FaultProfile;

use common::{config, FAULTY};

fn manifest_bytes(dir: &Path) -> Vec<u8> {
    fs::read(dir.join(dataset::MANIFEST_FILE)).unwrap()
}

fn records(dir: &Path) -> Vec<SampleRecord> {
    load_dataset(dir).unwrap().0.records
}

/// Every file except the run stats and config snapshot, which hold wall
/// time, output path and worker count.
fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if ![dataset::STATS_FILE, dataset::CONFIG_FILE]
                .contains(&p.file_name().unwrap().to_str().unwrap())
            {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn worker_count_does_not_change_output() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, workers) in dirs.iter().zip([1, 4, 16]) {
        let mut cfg = config(dir.path(), 40);
        cfg.synthesis.fault = FAULTY;
        cfg.workers = workers;
        orchestrator::run(&cfg, &RunOptions::default()).unwrap();
    }
    let first = tree_bytes(dirs[0].path());
    assert!(first.len() > 80);
    for d in &dirs[1..] {
        assert!(tree_bytes(d.path()) == first);
    }
}

#[test]
fn iid_run_is_valid_and_unbalanced_plan_respected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), 30);
    cfg.plan.balance = Balance::IidHierarchical;
    cfg.plan.seed = 3;
    cfg.synthesis.fault = FAULTY;
    orchestrator::run(&cfg, &RunOptions::default()).unwrap();
    let report = validate_dir(tmp.path());
    assert!(report.ok() && report.complete, "{report:?}");
    let planned = sample_labels(&common::catalog(), &cfg.plan).unwrap();
    for (r, l) in records(tmp.path()).iter().zip(&planned) {
        assert_eq!((&r.brand, r.mode), (&l.brand, l.mode));
    }
}

#[test]
fn no_augment_resizes_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), 8);
    cfg.augment.rotation_max_degrees = 0.0;
    cfg.augment.target_size = 32;
    orchestrator::run(&cfg, &RunOptions::default()).unwrap();
    for r in records(tmp.path()) {
        let png = fs::read(tmp.path().join(&r.image_path)).unwrap();
        let img = synthset::imaging::decode_png(&png).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32));
    }
}

#[test]
fn failed_run_keeps_what_it_wrote() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), 16);
    cfg.synthesis.fault = FaultProfile {
        p_zero_cars: 0.45,
        p_two_cars: 0.45,
    };
    cfg.max_attempts_per_slot = 1;
    let err = orchestrator::run(&cfg, &RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Quota(_)), "{err}");
    let report = validate_dir(tmp.path());
    assert!(report.ok() && !report.complete, "{report:?}");
}

fn stats_file(dir: &Path) -> RunStats {
    serde_json::from_str(&fs::read_to_string(dir.join(dataset::STATS_FILE)).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn quota_and_conservation_under_faults(
        per_brand in 1usize..5,
        seed in any::<u64>(),
        p0 in 0.0f64..0.3,
        p2 in 0.0f64..0.3,
        t2i in prop::sample::select(vec![0.0, 0.5, 1.0]),
        workers in 1usize..4,
    ) {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = config(tmp.path(), per_brand * 8);
        cfg.synthesis.size = 48;
        cfg.plan.seed = seed;
        cfg.plan.mode_mix.text_to_image = t2i;
        cfg.plan.mode_mix.image_to_image = 1.0 - t2i;
        cfg.synthesis.fault = FaultProfile { p_zero_cars: p0, p_two_cars: p2 };
        cfg.max_attempts_per_slot = 40;
        cfg.workers = workers;
        let out = orchestrator::run(&cfg, &RunOptions::default()).unwrap();

        let recs = records(tmp.path());
        let stats: DatasetStats = dataset::dataset_stats(&recs, &common::brands());
        prop_assert!(stats.balanced);
        prop_assert!(stats.per_brand.iter().all(|(_, n)| *n == per_brand));

        // Every attempt either became a record or left a reason behind.
        let s = stats_file(tmp.path());
        prop_assert_eq!(&s, &out.stats);
        let reasons: u64 = s.rejected.values().sum();
        prop_assert_eq!(s.attempts, recs.len() as u64 + reasons);
        let in_records: BTreeMap<RejectReason, u64> = dataset::rejected_counts(&recs);
        prop_assert_eq!(&in_records, &s.rejected);
        prop_assert!(recs.iter().all(|r| r.rejected.len() < cfg.max_attempts_per_slot));

        let t2i_records = recs.iter().filter(|r| r.mode == Mode::TextToImage).count();
        let [(_, t2i_quota), _] = cfg.plan.mode_mix.apportion(per_brand);
        prop_assert_eq!(t2i_records, t2i_quota * 8);
        let report = validate_dir(tmp.path());
        prop_assert!(report.ok() && report.complete, "{:?}", report);
    }

    #[test]
    fn same_seed_twice_is_byte_identical(seed in any::<u64>()) {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for d in [&a, &b] {
            let mut cfg = config(d.path(), 16);
            cfg.synthesis.size = 48;
            cfg.plan.seed = seed;
            cfg.synthesis.fault = FAULTY;
            orchestrator::run(&cfg, &RunOptions::default()).unwrap();
        }
        prop_assert_eq!(manifest_bytes(a.path()), manifest_bytes(b.path()));
        prop_assert!(tree_bytes(a.path()) == tree_bytes(b.path()));
    }
}
