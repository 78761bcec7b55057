//! Evaluation: target accuracy, the domain probe, embedding export, run
//! metrics files and cross-run reports.
//!
//! Metrics CSV (`metrics.csv`), one row per epoch:
//!
//! ```text
//! epoch,target_accuracy,pl_quality,pl_keep_ratio,domain_probe_accuracy,mean_loss_s,mean_loss_u,mean_loss_c,epoch_seconds,forward_pass_total
//! ```
//!
//! `pl_quality` is empty when no probe sample cleared the threshold.
//!
//! Step CSV (`steps.csv`), one row per optimizer step:
//!
//! ```text
//! step,epoch,loss_s,loss_u,loss_c,total,lr,keep_ratio,forward_passes,contrastive_skipped
//! ```

mod embed;
mod probe;
mod report;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{rows_to_array, Model};
use crate::pseudo_label::argmax;
use crate::trainer::StepRecord;

pub use embed::{embedding_dump, export_embeddings, read_embeddings, EmbeddingDump, EmbeddingRow};
pub use probe::{domain_probe_accuracy, ProbeKind};
pub use report::{mean, median, report, MethodSummary, MetricSummary, Report, REPORT_METRICS};

pub const METRICS_HEADER: &str = "epoch,target_accuracy,pl_quality,pl_keep_ratio,domain_probe_accuracy,mean_loss_s,mean_loss_u,mean_loss_c,epoch_seconds,forward_pass_total";
pub const STEPS_HEADER: &str = "step,epoch,loss_s,loss_u,loss_c,total,lr,keep_ratio,forward_passes,contrastive_skipped";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub target_accuracy: f64,
    pub pl_quality: Option<f64>,
    pub pl_keep_ratio: f64,
    pub domain_probe_accuracy: f64,
    pub mean_loss_s: f64,
    pub mean_loss_u: f64,
    pub mean_loss_c: f64,
    pub epoch_seconds: f64,
    pub forward_pass_total: u64,
}

/// Identity of a run, used to group runs in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub method: String,
    pub seed: u64,
    pub target_domain: usize,
    /// Fingerprint of the dataset and split settings; runs are only
    /// comparable when it matches.
    pub benchmark: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub info: RunInfo,
    pub epochs: Vec<EpochRow>,
    pub steps: Vec<StepRecord>,
}

impl RunMetrics {
    pub fn final_epoch(&self) -> Option<&EpochRow> {
        self.epochs.last()
    }
}

/// Fraction of argmax-correct predictions on un-augmented samples.
pub fn target_accuracy(model: &Model, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("target accuracy of an empty sample set".into()));
    }
    let x = rows_to_array(&samples.iter().map(|s| s.features.clone()).collect::<Vec<_>>(), model.config().input_dim)?;
    let f = model.forward_batch(&x)?;
    let correct = f
        .logits
        .rows()
        .into_iter()
        .zip(samples)
        .filter(|(row, s)| argmax(row.as_slice().expect("contiguous row")) == s.class_id)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

pub fn epoch_row_csv(r: &EpochRow) -> String {
    format!(
        "{},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
        r.epoch,
        r.target_accuracy,
        fmt_opt(r.pl_quality),
        r.pl_keep_ratio,
        r.domain_probe_accuracy,
        r.mean_loss_s,
        r.mean_loss_u,
        r.mean_loss_c,
        r.epoch_seconds,
        r.forward_pass_total
    )
}

pub fn step_row_csv(s: &StepRecord) -> String {
    format!(
        "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
        s.step,
        s.epoch,
        s.loss_s,
        s.loss_u,
        s.loss_c,
        s.total,
        s.lr,
        s.keep_ratio,
        s.forward_passes,
        u8::from(s.contrastive_skipped)
    )
}

/// Writes `metrics.csv` and `steps.csv` into `dir`.
pub fn write_metrics(m: &RunMetrics, dir: &Path) -> Result<()> {
    let mut epochs = String::from(METRICS_HEADER);
    epochs.push('\n');
    for r in &m.epochs {
        writeln!(epochs, "{}", epoch_row_csv(r)).unwrap();
    }
    let mut steps = String::from(STEPS_HEADER);
    steps.push('\n');
    for s in &m.steps {
        writeln!(steps, "{}", step_row_csv(s)).unwrap();
    }
    let p = dir.join("metrics.csv");
    std::fs::write(&p, epochs).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("steps.csv");
    std::fs::write(&p, steps).map_err(|e| Error::io(&p, e))
}

fn parse_rows(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::Data(format!("{}: unexpected header", path.display())));
    }
    Ok(lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_owned).collect()).collect())
}

fn field<T: std::str::FromStr>(path: &Path, row: &[String], i: usize) -> Result<T> {
    row.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Data(format!("{}: bad or missing column {i} in row {row:?}", path.display())))
}

/// Reads `metrics.csv` and `steps.csv` from `dir`.
pub fn read_metrics(dir: &Path, info: RunInfo) -> Result<RunMetrics> {
    let p = dir.join("metrics.csv");
    let mut epochs = Vec::new();
    for row in parse_rows(&p, METRICS_HEADER)? {
        epochs.push(EpochRow {
            epoch: field(&p, &row, 0)?,
            target_accuracy: field(&p, &row, 1)?,
            pl_quality: if row.get(2).is_some_and(String::is_empty) { None } else { Some(field(&p, &row, 2)?) },
            pl_keep_ratio: field(&p, &row, 3)?,
            domain_probe_accuracy: field(&p, &row, 4)?,
            mean_loss_s: field(&p, &row, 5)?,
            mean_loss_u: field(&p, &row, 6)?,
            mean_loss_c: field(&p, &row, 7)?,
            epoch_seconds: field(&p, &row, 8)?,
            forward_pass_total: field(&p, &row, 9)?,
        });
    }
    let p = dir.join("steps.csv");
    let mut steps = Vec::new();
    for row in parse_rows(&p, STEPS_HEADER)? {
        steps.push(StepRecord {
            step: field(&p, &row, 0)?,
            epoch: field(&p, &row, 1)?,
            loss_s: field(&p, &row, 2)?,
            loss_u: field(&p, &row, 3)?,
            loss_c: field(&p, &row, 4)?,
            total: field(&p, &row, 5)?,
            lr: field(&p, &row, 6)?,
            keep_ratio: field(&p, &row, 7)?,
            forward_passes: field(&p, &row, 8)?,
            contrastive_skipped: field::<u8>(&p, &row, 9)? != 0,
        });
    }
    Ok(RunMetrics { info, epochs, steps })
}

impl Default for EpochRow {
    fn default() -> Self {
        Self {
            epoch: 0,
            target_accuracy: 0.0,
            pl_quality: None,
            pl_keep_ratio: 0.0,
            domain_probe_accuracy: 0.0,
            mean_loss_s: 0.0,
            mean_loss_u: 0.0,
            mean_loss_c: 0.0,
            epoch_seconds: 0.0,
            forward_pass_total: 0,
        }
    }
}
