//! Brute-force reference for the contrastive regularizer.
//!
//! Recomputes every group mean directly from the samples with explicit
//! scalar loops (no shared sums, no helpers from the main implementation),
//! so it can serve as ground truth for equivalence tests.

use super::{FixClrConfig, LossOutput, DomainTerm, RepresentationBatch, SimilarityMode, Variant};
use crate::error::{Error, Result};

pub const ORACLE_MAX_SAMPLES: usize = 512;

enum Members {
    Minus(usize, usize),
    Same(usize, usize),
    Class(usize),
}

fn member(batch: &RepresentationBatch, s: usize, m: &Members) -> bool {
    if !batch.is_eligible(s) {
        return false;
    }
    match *m {
        Members::Minus(i, j) => batch.domain_id(s) == i && batch.class_id(s) != j,
        Members::Same(i, j) => batch.domain_id(s) == i && batch.class_id(s) == j,
        Members::Class(j) => batch.class_id(s) == j,
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Unit mean of a group, `None` when empty or (near) zero.
fn centroid(batch: &RepresentationBatch, m: &Members) -> Option<Vec<f64>> {
    let dim = batch.dim();
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for s in 0..batch.len() {
        if member(batch, s, m) {
            let v = batch.vector(s);
            for k in 0..dim {
                mean[k] += v[k];
            }
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    let mut len = 0.0;
    for k in 0..dim {
        mean[k] /= count as f64;
        len += mean[k] * mean[k];
    }
    let len = len.sqrt();
    if len < super::DEGENERATE_NORM {
        return None;
    }
    for k in 0..dim {
        mean[k] /= len;
    }
    Some(mean)
}

fn group_sim(batch: &RepresentationBatch, a: &Members, b: &Members, mode: SimilarityMode) -> Option<f64> {
    match mode {
        SimilarityMode::Centroid => {
            let ca = centroid(batch, a)?;
            let cb = centroid(batch, b)?;
            Some(cos(&ca, &cb))
        }
        SimilarityMode::MeanPairwise => {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for s in 0..batch.len() {
                if !member(batch, s, a) {
                    continue;
                }
                for t in 0..batch.len() {
                    if member(batch, t, b) {
                        total += cos(batch.vector(s), batch.vector(t));
                        pairs += 1;
                    }
                }
            }
            if pairs == 0 {
                None
            } else {
                Some(total / pairs as f64)
            }
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut m = xs[0];
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += (x - m).exp();
    }
    m + acc.ln()
}

/// Reference value of the variant selected by `cfg.variant`. Batches larger
/// than [`ORACLE_MAX_SAMPLES`] are rejected.
pub fn fixclr_oracle(batch: &RepresentationBatch, cfg: &FixClrConfig) -> Result<LossOutput> {
    cfg.validate()?;
    if batch.len() > ORACLE_MAX_SAMPLES {
        return Err(Error::Domain(format!("oracle accepts at most {ORACLE_MAX_SAMPLES} samples, got {}", batch.len())));
    }
    let tau = cfg.temperature;
    let mut classes: Vec<usize> = Vec::new();
    let mut domains: Vec<usize> = Vec::new();
    for s in 0..batch.len() {
        if !batch.is_eligible(s) {
            continue;
        }
        if !classes.contains(&batch.class_id(s)) {
            classes.push(batch.class_id(s));
        }
        if !domains.contains(&batch.domain_id(s)) {
            domains.push(batch.domain_id(s));
        }
    }
    classes.sort_unstable();
    domains.sort_unstable();
    let skipped = LossOutput { value: 0.0, skipped: true, domain_terms: Vec::new() };
    if classes.len() < 2 {
        return Ok(skipped);
    }

    let mut total = 0.0;
    let mut terms = Vec::new();
    for &i in &domains {
        let mut negatives = Vec::new();
        for &j in &classes {
            if let Some(s) = group_sim(batch, &Members::Minus(i, j), &Members::Class(j), cfg.similarity) {
                negatives.push(s / tau);
            }
        }
        let value = match cfg.variant {
            Variant::RepelOnly => {
                if negatives.is_empty() {
                    continue;
                }
                // -log(exp(1/tau) / sum_j exp(sim_j / tau))
                log_sum_exp(&negatives) - 1.0 / tau
            }
            Variant::WithPositives => {
                let mut pos_total = 0.0;
                let mut pos_count = 0usize;
                for &j in &classes {
                    if let Some(s) = group_sim(batch, &Members::Same(i, j), &Members::Class(j), cfg.similarity) {
                        pos_total += s;
                        pos_count += 1;
                    }
                }
                if pos_count == 0 {
                    continue;
                }
                let p = pos_total / pos_count as f64 / tau;
                let mut all = vec![p];
                all.extend_from_slice(&negatives);
                log_sum_exp(&all) - p
            }
        };
        total += value;
        terms.push(DomainTerm { domain: i, value, pairs: negatives.len() });
    }
    if terms.is_empty() {
        return Ok(skipped);
    }
    Ok(LossOutput { value: total, skipped: false, domain_terms: terms })
}
