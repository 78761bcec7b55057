//! Cross-run comparison tables.
//!
//! Runs are grouped by method. Within a method, runs sharing a seed (the
//! leave-one-domain-out targets of one seed) are first averaged into one
//! value per seed; the table then reports mean, median and range
//! (max - min) over seeds of each final-epoch metric.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{EpochRow, RunMetrics};
use crate::error::{Error, Result};

pub const REPORT_METRICS: [&str; 5] =
    ["target_accuracy", "pl_quality", "pl_keep_ratio", "domain_probe_accuracy", "epoch_seconds"];

fn metric(row: &EpochRow, name: &str) -> Option<f64> {
    match name {
        "target_accuracy" => Some(row.target_accuracy),
        "pl_quality" => row.pl_quality,
        "pl_keep_ratio" => Some(row.pl_keep_ratio),
        "domain_probe_accuracy" => Some(row.domain_probe_accuracy),
        "epoch_seconds" => Some(row.epoch_seconds),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub median: f64,
    pub range: f64,
    /// Seeds that had a defined value.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub runs: usize,
    /// Indexed like [`REPORT_METRICS`]; `None` when no seed had a value.
    pub metrics: Vec<Option<MetricSummary>>,
}

impl MethodSummary {
    pub fn get(&self, name: &str) -> Option<&MetricSummary> {
        let i = REPORT_METRICS.iter().position(|m| *m == name)?;
        self.metrics[i].as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub benchmark: String,
    pub methods: Vec<MethodSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean as `x0 + mean(x - x0)`, so identical values average to exactly
/// themselves.
pub fn mean(values: &[f64]) -> f64 {
    let x0 = values[0];
    x0 + values.iter().map(|x| x - x0).sum::<f64>() / values.len() as f64
}

fn summarize(values: &[f64]) -> Option<MetricSummary> {
    if values.is_empty() {
        return None;
    }
    let mean = mean(values);
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    Some(MetricSummary { mean, median: median(values), range: hi - lo, count: values.len() })
}

pub fn report(runs: &[RunMetrics]) -> Result<Report> {
    let first = runs.first().ok_or_else(|| Error::Domain("report needs at least one run".into()))?;
    if let Some(r) = runs.iter().find(|r| r.info.benchmark != first.info.benchmark) {
        return Err(Error::Data(format!(
            "runs come from different benchmarks ({} vs {})",
            first.info.benchmark, r.info.benchmark
        )));
    }
    // method -> seed -> final rows
    let mut grouped: BTreeMap<&str, BTreeMap<u64, Vec<&EpochRow>>> = BTreeMap::new();
    for r in runs {
        let row = r.final_epoch().ok_or_else(|| {
            Error::Data(format!("run {} seed {} target {} has no epochs", r.info.method, r.info.seed, r.info.target_domain))
        })?;
        grouped.entry(&r.info.method).or_default().entry(r.info.seed).or_default().push(row);
    }
    let methods = grouped
        .into_iter()
        .map(|(method, seeds)| {
            let metrics = REPORT_METRICS
                .iter()
                .map(|name| {
                    let per_seed: Vec<f64> = seeds
                        .values()
                        .filter_map(|rows| {
                            let vals: Vec<f64> = rows.iter().filter_map(|r| metric(r, name)).collect();
                            (!vals.is_empty()).then(|| mean(&vals))
                        })
                        .collect();
                    summarize(&per_seed)
                })
                .collect();
            MethodSummary {
                method: method.to_owned(),
                runs: seeds.values().map(Vec::len).sum(),
                seeds: seeds.keys().copied().collect(),
                metrics,
            }
        })
        .collect();
    Ok(Report { benchmark: first.info.benchmark.clone(), methods })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

impl Report {
    /// `method,seeds,runs,<metric>_mean,<metric>_median,<metric>_range,...`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,seeds,runs");
        for m in REPORT_METRICS {
            write!(out, ",{m}_mean,{m}_median,{m}_range").unwrap();
        }
        out.push('\n');
        for s in &self.methods {
            write!(out, "{},{},{}", s.method, s.seeds.len(), s.runs).unwrap();
            for m in &s.metrics {
                let m = m.as_ref();
                write!(out, ",{},{},{}", cell(m.map(|x| x.mean)), cell(m.map(|x| x.median)), cell(m.map(|x| x.range)))
                    .unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("benchmark: {}\n", self.benchmark);
        write!(out, "{:<24} {:>5} {:>5}", "method", "seeds", "runs").unwrap();
        for m in REPORT_METRICS {
            write!(out, " {m:>24}").unwrap();
        }
        out.push('\n');
        for s in &self.methods {
            write!(out, "{:<24} {:>5} {:>5}", s.method, s.seeds.len(), s.runs).unwrap();
            for m in &s.metrics {
                let text = m.as_ref().map_or_else(|| "n/a".to_owned(), |x| format!("{:.4} ± {:.4}", x.mean, x.range / 2.0));
                write!(out, " {text:>24}").unwrap();
            }
            out.push('\n');
        }
        out.push_str("(mean ± half-range over seeds; domain_probe_accuracy is a linear-probe proxy for domain invariance, lower is more invariant)\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RunInfo;

    fn run(method: &str, seed: u64, target: usize, acc: f64, bench: &str) -> RunMetrics {
        RunMetrics {
            info: RunInfo { method: method.into(), seed, target_domain: target, benchmark: bench.into() },
            epochs: vec![
                EpochRow { epoch: 0, target_accuracy: 0.0, ..Default::default() },
                EpochRow {
                    epoch: 1,
                    target_accuracy: acc,
                    pl_quality: Some(acc / 2.0),
                    pl_keep_ratio: 0.5,
                    domain_probe_accuracy: 0.4,
                    epoch_seconds: 1.5,
                    ..Default::default()
                },
            ],
            steps: vec![],
        }
    }

    #[test]
    fn single_run_equals_final_row() {
        let r = report(&[run("fixclr", 1, 0, 0.8, "b")]).unwrap();
        let s = &r.methods[0];
        assert_eq!(s.get("target_accuracy").unwrap().mean, 0.8);
        assert_eq!(s.get("pl_quality").unwrap().mean, 0.4);
        assert_eq!(s.get("domain_probe_accuracy").unwrap().mean, 0.4);
        assert_eq!(s.get("target_accuracy").unwrap().range, 0.0);
    }

    #[test]
    fn identical_runs_have_zero_range() {
        let runs = vec![run("a", 1, 0, 0.7, "b"), run("a", 2, 0, 0.7, "b"), run("a", 3, 0, 0.7, "b")];
        let r = report(&runs).unwrap();
        let t = r.methods[0].get("target_accuracy").unwrap();
        assert_eq!(t.range, 0.0);
        assert_eq!(t.mean, 0.7);
        assert_eq!(t.count, 3);
    }

    #[test]
    fn targets_of_one_seed_are_averaged() {
        let runs: Vec<RunMetrics> = (0..4).map(|t| run("m", 5, t, 0.1 * (t + 1) as f64, "b")).collect();
        let r = report(&runs).unwrap();
        let t = r.methods[0].get("target_accuracy").unwrap();
        assert!((t.mean - 0.25).abs() < 1e-15);
        assert_eq!(r.methods[0].runs, 4);
        assert_eq!(r.methods[0].seeds, vec![5]);
    }

    #[test]
    fn mismatched_benchmarks_are_rejected() {
        assert!(matches!(report(&[run("a", 1, 0, 0.5, "x"), run("a", 2, 0, 0.5, "y")]), Err(Error::Data(_))));
        assert!(report(&[]).is_err());
    }

    #[test]
    fn csv_and_text_render() {
        let r = report(&[run("a", 1, 0, 0.5, "x"), run("b", 1, 0, 0.6, "x")]).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("method,seeds,runs,target_accuracy_mean"));
        assert!(r.to_text().contains("0.6000"));
    }
}
