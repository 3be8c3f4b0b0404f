//! Evaluation math: confusion matrices, accuracies, learning-curve
//! aggregation over repeated runs, and throughput accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::sampler::Mode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub actual: String,
    pub predicted: String,
}

/// Parse `sample_id,actual,predicted` lines; a leading header row is skipped.
pub fn load_predictions(text: &str) -> Result<Vec<Prediction>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            row: i + 1,
            message: e.to_string(),
        })?;
        if i == 0 && row.iter().eq(["sample_id", "actual", "predicted"]) {
            continue;
        }
        if row.len() != 3 {
            return Err(Error::Parse {
                row: i + 1,
                message: format!("expected 3 fields, found {}", row.len()),
            });
        }
        out.push(Prediction {
            sample_id: row[0].to_string(),
            actual: row[1].to_string(),
            predicted: row[2].to_string(),
        });
    }
    Ok(out)
}

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub brands: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion(preds: &[Prediction], brands: &[String]) -> Result<ConfusionMatrix> {
    if preds.is_empty() {
        return Err(Error::Input("prediction set is empty".into()));
    }
    let index: BTreeMap<&str, usize> = brands
        .iter()
        .enumerate()
        .map(|(i, b)| (b.as_str(), i))
        .collect();
    let n = brands.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (row, p) in preds.iter().enumerate() {
        let lookup = |b: &str| {
            index.get(b).copied().ok_or_else(|| {
                Error::Input(format!(
                    "prediction row {} (sample {}): unknown brand `{b}`",
                    row + 1,
                    p.sample_id
                ))
            })
        };
        let (a, q) = (lookup(&p.actual)?, lookup(&p.predicted)?);
        counts[a][q] += 1;
    }
    Ok(ConfusionMatrix {
        brands: brands.to_vec(),
        counts,
    })
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Each row divided by its sum; rows without samples stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Micro accuracy: trace over total.
    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..self.brands.len()).map(|i| self.counts[i][i]).sum();
        trace as f64 / self.total() as f64
    }

    pub fn per_class_accuracy(&self) -> Vec<(String, f64)> {
        let norm = self.row_normalized();
        self.brands
            .iter()
            .enumerate()
            .map(|(i, b)| (b.clone(), norm[i][i]))
            .collect()
    }

    /// Mean per-class accuracy over classes that have samples.
    pub fn macro_accuracy(&self) -> f64 {
        let totals = self.row_totals();
        let per: Vec<f64> = self
            .per_class_accuracy()
            .into_iter()
            .zip(&totals)
            .filter(|(_, &t)| t > 0)
            .map(|((_, a), _)| a)
            .collect();
        per.iter().sum::<f64>() / per.len() as f64
    }

    /// Row-normalized cells at 2 decimals; cells with no predictions print `-`.
    pub fn rendered_rows(&self) -> Vec<Vec<String>> {
        self.row_normalized()
            .iter()
            .zip(&self.counts)
            .map(|(norm, counts)| {
                norm.iter()
                    .zip(counts)
                    .map(|(v, &c)| {
                        if c == 0 {
                            "-".to_string()
                        } else {
                            format!("{v:.2}")
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn table(&self, cells: &[Vec<String>]) -> String {
        let width = self
            .brands
            .iter()
            .map(|b| b.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = format!("{:<width$}", "actual\\pred");
        for b in &self.brands {
            let _ = write!(out, " {b:>width$}");
        }
        out.push('\n');
        for (b, row) in self.brands.iter().zip(cells) {
            let _ = write!(out, "{b:<width$}");
            for c in row {
                let _ = write!(out, " {c:>width$}");
            }
            out.push('\n');
        }
        out
    }

    pub fn render_counts(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .counts
            .iter()
            .map(|r| r.iter().map(|c| c.to_string()).collect())
            .collect();
        self.table(&cells)
    }

    pub fn render_normalized(&self) -> String {
        self.table(&self.rendered_rows())
    }
}

/// Accuracies of repeated trainings, grouped by dataset size.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSeries {
    pub points: BTreeMap<u64, Vec<f64>>,
}

impl RunSeries {
    pub fn push(&mut self, dataset_size: u64, accuracy: f64) {
        self.points.entry(dataset_size).or_default().push(accuracy);
    }
}

/// Parse `dataset_size,accuracy` lines; a leading header row is skipped.
pub fn load_runs(text: &str) -> Result<RunSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut series = RunSeries::default();
    for (i, row) in reader.records().enumerate() {
        let bad = |m: String| Error::Parse {
            row: i + 1,
            message: m,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        if i == 0 && row.iter().eq(["dataset_size", "accuracy"]) {
            continue;
        }
        if row.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", row.len())));
        }
        let size = row[0]
            .parse()
            .map_err(|_| bad(format!("bad size `{}`", &row[0])))?;
        let acc: f64 = row[1]
            .parse()
            .map_err(|_| bad(format!("bad accuracy `{}`", &row[1])))?;
        if !(0.0..=1.0).contains(&acc) {
            return Err(bad(format!("accuracy {acc} outside [0,1]")));
        }
        series.push(size, acc);
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub dataset_size: u64,
    pub repetitions: usize,
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean and standard deviation via Welford's update.
pub fn mean_std(values: &[f64], kind: StdKind) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for &v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    let dof = match kind {
        StdKind::Population => n,
        StdKind::Sample => n - 1.0,
    };
    let std = if dof > 0.0 {
        (m2 / dof).max(0.0).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// One point per dataset size, sorted by size, with a band of one standard deviation.
pub fn aggregate_runs(series: &RunSeries, kind: StdKind) -> Vec<CurvePoint> {
    series
        .points
        .iter()
        .filter(|(_, accs)| !accs.is_empty())
        .map(|(&size, accs)| {
            let (mean, std) = mean_std(accs, kind);
            CurvePoint {
                dataset_size: size,
                repetitions: accs.len(),
                mean,
                std,
                lower: mean - std,
                upper: mean + std,
            }
        })
        .collect()
}

pub fn render_curve_table(points: &[CurvePoint]) -> String {
    let mut out = format!(
        "{:>12} {:>4} {:>8} {:>8} {:>8} {:>8}\n",
        "dataset_size", "reps", "mean", "std", "lower", "upper"
    );
    for p in points {
        let _ = writeln!(
            out,
            "{:>12} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            p.dataset_size, p.repetitions, p.mean, p.std, p.lower, p.upper
        );
    }
    out
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("dataset_size,repetitions,mean,std,lower,upper\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.dataset_size, p.repetitions, p.mean, p.std, p.lower, p.upper
        );
    }
    out
}

/// Accuracy against dataset size on a log x axis with the ±1 std band shaded.
pub fn curve_svg(points: &[CurvePoint]) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if points.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let lx: Vec<f64> = points
        .iter()
        .map(|p| (p.dataset_size.max(1) as f64).ln())
        .collect();
    let (x0, x1) = (lx[0], lx[lx.len() - 1]);
    let (y0, y1) = points.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
        (lo.min(p.lower), hi.max(p.upper))
    });
    let (y0, y1) = if y1 - y0 < 1e-9 {
        (y0 - 0.05, y1 + 0.05)
    } else {
        (y0, y1)
    };
    let sx = |v: f64| {
        if x1 > x0 {
            pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad)
        } else {
            w / 2.0
        }
    };
    let sy = |v: f64| h - pad - (v - y0) / (y1 - y0) * (h - 2.0 * pad);

    let upper: Vec<String> = points
        .iter()
        .zip(&lx)
        .map(|(p, &x)| format!("{:.2},{:.2}", sx(x), sy(p.upper)))
        .collect();
    let lower: Vec<String> = points
        .iter()
        .zip(&lx)
        .rev()
        .map(|(p, &x)| format!("{:.2},{:.2}", sx(x), sy(p.lower)))
        .collect();
    let _ = writeln!(
        out,
        "<polygon points=\"{} {}\" fill=\"orange\" fill-opacity=\"0.25\"/>",
        upper.join(" "),
        lower.join(" ")
    );
    let line: Vec<String> = points
        .iter()
        .zip(&lx)
        .map(|(p, &x)| format!("{:.2},{:.2}", sx(x), sy(p.mean)))
        .collect();
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"orange\" stroke-width=\"2\"/>",
        line.join(" ")
    );
    for (p, &x) in points.iter().zip(&lx) {
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"6\" height=\"6\" fill=\"orange\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            sx(x) - 3.0,
            sy(p.mean) - 3.0,
            sx(x),
            h - pad + 16.0,
            p.dataset_size
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{pad}\" y=\"{:.2}\" font-size=\"11\">{y1:.2}</text>\n\
         <text x=\"{pad}\" y=\"{:.2}\" font-size=\"11\">{y0:.2}</text>\n</svg>",
        pad - 8.0,
        h - pad + 30.0
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeThroughput {
    pub mode: Mode,
    pub images: usize,
    pub total_seconds: f64,
    pub mean_seconds_per_image: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub images: usize,
    pub wall_seconds: f64,
    pub mean_seconds_per_image: f64,
    pub per_mode: Vec<ModeThroughput>,
}

fn mean_or_zero(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-image latency means overall and per mode. `wall_seconds` defaults to
/// the latency sum when the run's wall time is unknown.
pub fn throughput_report(records: &[SampleRecord], wall_seconds: Option<f64>) -> ThroughputReport {
    let total: f64 = records.iter().map(|r| r.latency_seconds).sum();
    let per_mode = Mode::ALL
        .iter()
        .map(|&mode| {
            let (n, sum) = records
                .iter()
                .filter(|r| r.mode == mode)
                .fold((0, 0.0), |(n, s), r| (n + 1, s + r.latency_seconds));
            ModeThroughput {
                mode,
                images: n,
                total_seconds: sum,
                mean_seconds_per_image: mean_or_zero(sum, n),
            }
        })
        .collect();
    ThroughputReport {
        images: records.len(),
        wall_seconds: wall_seconds.unwrap_or(total),
        mean_seconds_per_image: mean_or_zero(total, records.len()),
        per_mode,
    }
}

impl ThroughputReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "images: {}\nwall seconds: {:.3}\nmean seconds per image: {:.3}\n",
            self.images, self.wall_seconds, self.mean_seconds_per_image
        );
        for m in &self.per_mode {
            let _ = writeln!(
                out,
                "  {:<15} images {:>6}  mean {:.3} s",
                m.mode.to_string(),
                m.images,
                m.mean_seconds_per_image
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::DEFAULT_BRANDS;
    use proptest::prelude::*;

    fn brands() -> Vec<String> {
        DEFAULT_BRANDS.iter().map(|s| s.to_string()).collect()
    }

    fn preds(pairs: &[(usize, usize, usize)]) -> Vec<Prediction> {
        let b = DEFAULT_BRANDS;
        let mut out = Vec::new();
        for &(a, p, n) in pairs {
            for _ in 0..n {
                out.push(Prediction {
                    sample_id: format!("s{}", out.len()),
                    actual: b[a].into(),
                    predicted: b[p].into(),
                });
            }
        }
        out
    }

    #[test]
    fn all_correct_is_identity() {
        let p = preds(&(0..8).map(|i| (i, i, 3)).collect::<Vec<_>>());
        let cm = confusion(&p, &brands()).unwrap();
        for (i, row) in cm.row_normalized().iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(cm.accuracy(), 1.0);
    }

    #[test]
    fn three_of_four() {
        let p = preds(&[(0, 0, 3), (1, 2, 1)]);
        assert_eq!(confusion(&p, &brands()).unwrap().accuracy(), 0.75);
    }

    #[test]
    fn unknown_brand_names_row() {
        let mut p = preds(&[(0, 0, 2)]);
        p[1].predicted = "Tesla".into();
        let err = confusion(&p, &brands()).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("Tesla"), "{err}");
    }

    #[test]
    fn empty_rows_stay_zero() {
        let cm = confusion(&preds(&[(0, 1, 2)]), &brands()).unwrap();
        assert!(cm.row_normalized()[3].iter().all(|v| *v == 0.0));
        assert_eq!(cm.macro_accuracy(), 0.0);
    }

    #[test]
    fn macro_averages_supported_classes() {
        let cm = confusion(
            &preds(&[(0, 0, 9), (0, 1, 1), (1, 1, 1), (1, 0, 1)]),
            &brands(),
        )
        .unwrap();
        assert!((cm.macro_accuracy() - 0.7).abs() < 1e-12);
        assert!((cm.accuracy() - 10.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn prediction_file_with_and_without_header() {
        let body = "a,Ford,Ford\nb,BMW,Audi\n";
        let with = load_predictions(&format!("sample_id,actual,predicted\n{body}")).unwrap();
        assert_eq!(with, load_predictions(body).unwrap());
        assert_eq!(with.len(), 2);
        assert!(load_predictions("a,Ford\n").is_err());
    }

    #[test]
    fn runs_file_groups_sizes() {
        let s = load_runs("dataset_size,accuracy\n12000,0.58\n25000,0.66\n12000,0.64\n").unwrap();
        assert_eq!(s.points[&12000], vec![0.58, 0.64]);
        assert!(load_runs("12000,1.5\n").is_err());
    }

    #[test]
    fn single_repetition_collapses() {
        let mut s = RunSeries::default();
        s.push(100, 0.7);
        let p = &aggregate_runs(&s, StdKind::Population)[0];
        assert_eq!((p.std, p.lower, p.upper), (0.0, 0.7, 0.7));
        let p = &aggregate_runs(&s, StdKind::Sample)[0];
        assert_eq!(p.std, 0.0);
    }

    #[test]
    fn sample_std_exceeds_population() {
        let v = [0.5, 0.6, 0.7, 0.8, 0.9];
        let (_, pop) = mean_std(&v, StdKind::Population);
        let (_, smp) = mean_std(&v, StdKind::Sample);
        assert!((smp / pop - (5.0f64 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mixed_mode_throughput() {
        let mut recs = Vec::new();
        for (i, (mode, lat)) in [
            (Mode::TextToImage, 1.0),
            (Mode::ImageToImage, 3.0),
            (Mode::TextToImage, 2.0),
        ]
        .into_iter()
        .enumerate()
        {
            let mut r = crate::dataset::tests_support::record(i);
            r.mode = mode;
            r.latency_seconds = lat;
            recs.push(r);
        }
        let t = throughput_report(&recs, None);
        assert_eq!(t.mean_seconds_per_image, 2.0);
        assert_eq!(t.per_mode[0].mean_seconds_per_image, 1.5);
        assert_eq!(t.per_mode[1].mean_seconds_per_image, 3.0);
        assert_eq!(t.wall_seconds, 6.0);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let mut s = RunSeries::default();
        for (n, a) in [(12000, 0.58), (12000, 0.64), (25000, 0.66)] {
            s.push(n, a);
        }
        let svg = curve_svg(&aggregate_runs(&s, StdKind::Population));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polygon") && svg.contains("<polyline"));
    }

    proptest! {
        #[test]
        fn mass_conserved(rows in proptest::collection::vec((0usize..8, 0usize..8), 1..300)) {
            let p = preds(&rows.iter().map(|&(a, q)| (a, q, 1)).collect::<Vec<_>>());
            let cm = confusion(&p, &brands()).unwrap();
            prop_assert_eq!(cm.total(), rows.len() as u64);
            // Brute-force tally oracle.
            for a in 0..8 {
                for q in 0..8 {
                    let n = rows.iter().filter(|r| **r == (a, q)).count() as u64;
                    prop_assert_eq!(cm.counts[a][q], n);
                    let row_n = rows.iter().filter(|r| r.0 == a).count();
                    let want = if row_n == 0 { 0.0 } else { n as f64 / row_n as f64 };
                    prop_assert_eq!(cm.row_normalized()[a][q], want);
                }
            }
            let trace = (0..8).map(|i| cm.counts[i][i]).sum::<u64>() as f64;
            prop_assert_eq!(cm.accuracy(), trace / rows.len() as f64);
            for (row, n) in cm.row_normalized().iter().zip(cm.row_totals()) {
                if n > 0 {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn rendered_rows_sum_near_one(rows in proptest::collection::vec((0usize..8, 0usize..8), 1..300)) {
            let p = preds(&rows.iter().map(|&(a, q)| (a, q, 1)).collect::<Vec<_>>());
            let cm = confusion(&p, &brands()).unwrap();
            for (cells, n) in cm.rendered_rows().iter().zip(cm.row_totals()) {
                if n == 0 { continue; }
                let s: f64 = cells.iter().filter(|c| *c != "-").map(|c| c.parse::<f64>().unwrap()).sum();
                // Each cell is off by at most 0.005, so the slack grows with the number of
                // nonzero cells; Table-2-style rows with few nonzero cells stay within 0.02.
                let nonzero = cells.iter().filter(|c| *c != "-").count() as f64;
                prop_assert!((s - 1.0).abs() <= 0.005 * nonzero + 1e-9);
            }
        }

        #[test]
        fn aggregate_permutation_invariant(mut v in proptest::collection::vec(0.0f64..1.0, 1..8), k in 0usize..8) {
            let mut s = RunSeries::default();
            for a in &v { s.push(1, *a); }
            let p1 = aggregate_runs(&s, StdKind::Population)[0].clone();
            let len = v.len();
            v.rotate_left(k % len);
            v.reverse();
            let mut s = RunSeries::default();
            for a in &v { s.push(1, *a); }
            let p2 = aggregate_runs(&s, StdKind::Population)[0].clone();
            prop_assert!((p1.mean - p2.mean).abs() < 1e-12 && (p1.std - p2.std).abs() < 1e-12);
        }

        #[test]
        fn throughput_mean_is_sum_over_count(lat in proptest::collection::vec(0.0f64..10.0, 1..50)) {
            let recs: Vec<SampleRecord> = lat.iter().enumerate().map(|(i, l)| {
                let mut r = crate::dataset::tests_support::record(i);
                r.latency_seconds = *l;
                r
            }).collect();
            let t = throughput_report(&recs, None);
            let mut oracle = 0.0;
            for l in &lat { oracle += l; }
            prop_assert!((t.mean_seconds_per_image - oracle / lat.len() as f64).abs() < 1e-12);
        }
    }
}
