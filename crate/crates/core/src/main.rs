use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use synthset::catalog::load_catalog_file;
use synthset::config::{BackendKind, PipelineConfig};
use synthset::dataset::{
    self, dataset_stats, load_real_samples, render_split_table, split_real, validate_dir, SplitRule,
};
use synthset::error::{Error, Result};
use synthset::metrics::{
    aggregate_runs, confusion, curve_csv, curve_svg, load_predictions, load_runs,
    render_curve_table, throughput_report, StdKind,
};
use synthset::orchestrator::{self, RunOptions, RunStats};
use synthset::quality::DetectorKind;
use synthset::sampler::{Balance, ModeMix};
use synthset::synthesis::mock::FaultProfile;
use synthset::synthesis::server::MockServer;

#[derive(Parser)]
#[command(
    name = "synthset",
    version,
    about = "Balanced synthetic car-brand datasets with a detection quality gate"
)]
struct Cli {
    /// Log progress details (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset, or continue an interrupted one with --resume.
    Generate(Box<GenerateArgs>),
    /// Check every dataset invariant; exit 1 on any violation.
    Validate { dir: PathBuf },
    /// Per-brand/mode/color histograms, balance and throughput of a dataset.
    Stats { dir: PathBuf },
    /// Split real photographs into validation and test by camera and time bucket.
    Split {
        #[arg(long)]
        rule: PathBuf,
        /// CSV with image_path,brand,camera_id,recorded_at.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, value_delimiter = ',')]
        brands: Option<Vec<String>>,
        /// Write validation.csv and test.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confusion matrix and accuracies from a sample_id,actual,predicted file.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long, value_delimiter = ',')]
        brands: Option<Vec<String>>,
        /// Print only the row-normalized matrix at two decimals.
        #[arg(long)]
        table2: bool,
        /// Report the macro (per-class mean) accuracy instead of micro.
        #[arg(long = "macro")]
        macro_avg: bool,
    },
    /// Mean and one-std band of accuracy per dataset size from a dataset_size,accuracy file.
    Curve {
        #[arg(long)]
        runs: PathBuf,
        /// Writes <prefix>.csv and <prefix>.svg.
        #[arg(long, default_value = "curve")]
        out_prefix: PathBuf,
        /// Use the sample (n-1) standard deviation.
        #[arg(long)]
        sample_std: bool,
    },
    /// Load and summarize a catalog.
    Catalog {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, value_delimiter = ',')]
        brands: Option<Vec<String>>,
        #[arg(long)]
        min_year: Option<i32>,
    },
    /// Serve the backend protocol with the procedural mock behind it.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// p_zero_cars,p_two_cars
        #[arg(long, value_parser = parse_fault)]
        fault: Option<FaultProfile>,
    },
}

#[derive(Args, Default)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue the run in --output (or the config's output).
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    output: Option<PathBuf>,

    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    brands: Option<Vec<String>>,
    #[arg(long)]
    min_year: Option<i32>,

    #[arg(long)]
    total: Option<usize>,
    #[arg(long)]
    balance: Option<Balance>,
    /// e.g. t2i=0.5,i2i=0.5
    #[arg(long)]
    mode_mix: Option<ModeMix>,
    /// File holding the prompt template.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    colors: Option<Vec<String>>,

    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    backend_url: Option<String>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Mock fault profile: p_zero_cars,p_two_cars
    #[arg(long, value_parser = parse_fault)]
    fault: Option<FaultProfile>,
    /// JSON listing of base photographs for image-to-image.
    #[arg(long)]
    base_pool: Option<PathBuf>,
    #[arg(long)]
    padding: Option<f64>,

    #[arg(long)]
    min_confidence: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    vehicle_labels: Option<Vec<String>>,
    #[arg(long)]
    detector: Option<DetectorKind>,
    #[arg(long)]
    detector_url: Option<String>,

    #[arg(long)]
    target_size: Option<usize>,
    #[arg(long)]
    rotation_max: Option<f64>,
    #[arg(long)]
    rotation_seed: Option<u64>,
    #[arg(long)]
    no_augment: bool,

    #[arg(long)]
    max_attempts: Option<usize>,
    #[arg(long)]
    keep_rejected: bool,
    /// Record latencies as zero so repeated runs are byte-identical.
    #[arg(long)]
    deterministic_timing: bool,
    /// Stop after this many manifest records, as if interrupted.
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

fn parse_fault(s: &str) -> std::result::Result<FaultProfile, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [p0, p2] = parts.as_slice() else {
        return Err("expected p_zero_cars,p_two_cars".into());
    };
    let p = |v: &str| v.parse::<f64>().map_err(|e| format!("{v}: {e}"));
    let fault = FaultProfile {
        p_zero_cars: p(p0)?,
        p_two_cars: p(p2)?,
    };
    fault.validate().map_err(|e| e.to_string())?;
    Ok(fault)
}

impl GenerateArgs {
    /// Every flag overrides its config counterpart.
    fn apply(&self, c: &mut PipelineConfig) -> Result<()> {
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(c.workers, self.workers);
        set!(c.plan.seed, self.seed);
        set!(c.output, self.output);
        if let Some(p) = &self.catalog {
            c.catalog.path = Some(p.clone());
        }
        set!(c.catalog.brands, self.brands);
        set!(c.catalog.min_year, self.min_year);
        set!(c.plan.total, self.total);
        set!(c.plan.balance, self.balance);
        set!(c.plan.mode_mix, self.mode_mix);
        if let Some(path) = &self.template {
            c.template = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path, e))?
                .trim_end_matches(['\r', '\n'])
                .to_string();
        }
        set!(c.plan.colors, self.colors);
        set!(c.synthesis.backend, self.backend);
        if let Some(u) = &self.backend_url {
            c.synthesis.url = Some(u.clone());
        }
        set!(c.synthesis.size, self.size);
        set!(c.synthesis.timeout_secs, self.timeout_secs);
        set!(c.synthesis.fault, self.fault);
        if let Some(p) = &self.base_pool {
            c.synthesis.base_pool = Some(p.clone());
        }
        set!(c.synthesis.padding_fraction, self.padding);
        set!(c.gate.min_confidence, self.min_confidence);
        if let Some(l) = &self.vehicle_labels {
            c.gate.vehicle_labels = l.iter().cloned().collect();
        }
        set!(c.detector.kind, self.detector);
        if let Some(u) = &self.detector_url {
            c.detector.url = Some(u.clone());
        }
        set!(c.augment.target_size, self.target_size);
        set!(c.augment.rotation_max_degrees, self.rotation_max);
        set!(c.augment.rotation_seed, self.rotation_seed);
        if self.no_augment {
            c.augment.rotation_max_degrees = 0.0;
        }
        set!(c.max_attempts_per_slot, self.max_attempts);
        c.keep_rejected |= self.keep_rejected;
        c.deterministic_timing |= self.deterministic_timing;
        Ok(())
    }
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let opts = RunOptions {
        stop_after: args.stop_after,
        progress: true,
    };
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None if args.resume => {
            let dir = args
                .output
                .as_deref()
                .ok_or_else(|| Error::Config("--resume needs --output or --config".into()))?;
            synthset::config::ConfigSnapshot::read(&dir.join(dataset::CONFIG_FILE))?.config
        }
        None => PipelineConfig::default(),
    };
    args.apply(&mut cfg)?;
    cfg.validate()?;
    let outcome = if args.resume {
        let dir = cfg.output.clone();
        orchestrator::resume(&dir, Some(&cfg), Some(cfg.workers), &opts)?
    } else {
        orchestrator::run(&cfg, &opts)?
    };
    eprint!("{}", outcome.stats.render());
    println!(
        "{} records in {}",
        outcome.manifest.records.len(),
        cfg.output.display()
    );
    Ok(())
}

fn validate(dir: &Path) -> Result<bool> {
    let report = validate_dir(dir);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    for e in &report.errors {
        println!("error: {e}");
    }
    println!(
        "{}: {} records, {}, {} error(s), {} warning(s)",
        if report.ok() { "valid" } else { "INVALID" },
        report.records,
        if report.complete {
            "complete"
        } else {
            "partial"
        },
        report.errors.len(),
        report.warnings.len()
    );
    Ok(report.ok())
}

fn stats(dir: &Path) -> Result<()> {
    let (manifest, _) = dataset::load_dataset(dir)?;
    let snapshot = manifest
        .config_snapshot
        .as_ref()
        .expect("loaded with snapshot");
    let s = dataset_stats(&manifest.records, &snapshot.config.catalog.brands);
    print!("{}", s.render());
    let run: Option<RunStats> = std::fs::read_to_string(dir.join(dataset::STATS_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    println!();
    print!(
        "{}",
        throughput_report(&manifest.records, run.map(|r| r.wall_seconds)).render()
    );
    Ok(())
}

fn brands_or_default(brands: &Option<Vec<String>>) -> Vec<String> {
    brands.clone().unwrap_or_else(|| {
        synthset::catalog::DEFAULT_BRANDS
            .iter()
            .map(|s| s.to_string())
            .collect()
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn split(rule: &Path, samples: &Path, brands: &[String], out: Option<&Path>) -> Result<()> {
    let rule = SplitRule::from_json(&read(rule)?)?;
    let samples = load_real_samples(&read(samples)?)?;
    let result = split_real(&samples, &rule, brands)?;
    print!("{}", render_split_table(&result.distribution(brands)));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, rows) in [
            ("validation.csv", &result.validation),
            ("test.csv", &result.test),
        ] {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
            write(&dir.join(name), &String::from_utf8_lossy(&bytes))?;
        }
    }
    Ok(())
}

fn eval(preds: &Path, brands: &[String], table2: bool, macro_avg: bool) -> Result<()> {
    let cm = confusion(&load_predictions(&read(preds)?)?, brands)?;
    if table2 {
        print!("{}", cm.render_normalized());
        return Ok(());
    }
    println!("counts (rows actual, columns predicted)");
    print!("{}", cm.render_counts());
    println!("\nrow-normalized");
    print!("{}", cm.render_normalized());
    if macro_avg {
        println!("\nmacro accuracy: {:.4}", cm.macro_accuracy());
    } else {
        println!("\naccuracy: {:.4}", cm.accuracy());
    }
    println!("per-class accuracy");
    for (b, a) in cm.per_class_accuracy() {
        println!("  {b:<12} {a:.2}");
    }
    Ok(())
}

fn curve(runs: &Path, prefix: &Path, sample_std: bool) -> Result<()> {
    let kind = if sample_std {
        StdKind::Sample
    } else {
        StdKind::Population
    };
    let points = aggregate_runs(&load_runs(&read(runs)?)?, kind);
    print!("{}", render_curve_table(&points));
    let csv_path = prefix.with_extension("csv");
    let svg_path = prefix.with_extension("svg");
    write(&csv_path, &curve_csv(&points))?;
    write(&svg_path, &curve_svg(&points))?;
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

fn catalog(path: &Path, brands: Option<Vec<String>>, min_year: Option<i32>) -> Result<()> {
    let mut filter = synthset::catalog::CatalogFilter::default();
    if let Some(b) = brands {
        filter.brand_whitelist = b;
    }
    if let Some(y) = min_year {
        filter.min_year = y;
    }
    let (cat, drops) = load_catalog_file(path, &filter)?;
    println!(
        "{:<12} {:>6} {:>6} {:>6}",
        "brand", "models", "first", "last"
    );
    for s in cat.summary() {
        let y = |v: Option<i32>| v.map_or("-".to_string(), |v| v.to_string());
        println!(
            "{:<12} {:>6} {:>6} {:>6}",
            s.brand,
            s.models,
            y(s.first_year),
            y(s.last_year)
        );
    }
    println!(
        "{} entries; dropped {} outside the brand list, {} without years >= {}",
        cat.entries.len(),
        drops.brand_filtered,
        drops.year_filtered,
        filter.min_year
    );
    Ok(())
}

fn serve(bind: &str, fault: FaultProfile) -> Result<()> {
    let server = MockServer::start(bind, fault)?;
    eprintln!("serving the mock backend on {}", server.url());
    server.join();
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Template { .. } | Error::Parse { .. } | Error::Consistency(_) => {
            2
        }
        Error::Transport(_) | Error::Request(_) | Error::Protocol(_) => 3,
        Error::Quota(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Generate(args) => generate(args),
        Command::Validate { dir } => match validate(dir) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Stats { dir } => stats(dir),
        Command::Split {
            rule,
            samples,
            brands,
            out,
        } => split(rule, samples, &brands_or_default(brands), out.as_deref()),
        Command::Eval {
            preds,
            brands,
            table2,
            macro_avg,
        } => eval(preds, &brands_or_default(brands), *table2, *macro_avg),
        Command::Curve {
            runs,
            out_prefix,
            sample_std,
        } => curve(runs, out_prefix, *sample_std),
        Command::Catalog {
            catalog: path,
            brands,
            min_year,
        } => catalog(path, brands.clone(), *min_year),
        Command::ServeMock { bind, fault } => serve(bind, fault.unwrap_or_default()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
