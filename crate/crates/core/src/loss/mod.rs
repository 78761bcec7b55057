//! Repel-only, pseudo-label-grouped contrastive regularizer.
//!
//! For every source domain `i` and class `j`, two groups are formed from the
//! eligible samples of a [`RepresentationBatch`]:
//!
//! * `CLS_j`: all samples of class `j`, any domain;
//! * `DOM_minus[i][j]`: samples of domain `i` whose class is not `j`.
//!
//! The repel-only loss is
//!
//! ```text
//! L = sum_i [ log sum_j exp(sim(DOM_minus[i][j], CLS_j) / tau) - 1 / tau ]
//! ```
//!
//! i.e. the InfoNCE form with the positive logit pinned to the constant
//! `1 / tau`, so nothing pulls same-class samples together and each
//! domain's non-`j` mass is pushed away from the global class-`j` group.
//! Classes for which either group is empty (or has a zero mean) are left
//! out of the inner sum.
//!
//! `sim` between groups is the cosine of the normalized group means by
//! default ([`SimilarityMode::Centroid`]) or the mean pairwise cosine
//! ([`SimilarityMode::MeanPairwise`]).
//!
//! The `with_positives` variant replaces the constant by a real positive:
//! `p_i`, the mean over classes present in domain `i` of
//! `sim(DOM_same[i][j], CLS_j)`, giving per domain
//! `-log(exp(p_i / tau) / (exp(p_i / tau) + sum_j exp(sim(DOM_minus[i][j], CLS_j) / tau)))`.

pub mod oracle;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use oracle::fixclr_oracle;

/// Group means with a norm below this are treated as absent.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Tolerance on `|v| = 1` for [`RepresentationBatch::new`].
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    RepelOnly,
    WithPositives,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    #[default]
    Centroid,
    MeanPairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixClrConfig {
    pub temperature: f64,
    pub loss_weight: f64,
    pub variant: Variant,
    pub similarity: SimilarityMode,
}

impl Default for FixClrConfig {
    fn default() -> Self {
        Self { temperature: 0.5, loss_weight: 1.0, variant: Variant::RepelOnly, similarity: SimilarityMode::Centroid }
    }
}

impl FixClrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.loss_weight >= 0.0 && self.loss_weight.is_finite()) {
            return Err(Error::Config(format!("loss_weight must be >= 0, got {}", self.loss_weight)));
        }
        Ok(())
    }
}

/// Projected vectors with their domain, (pseudo-)class and eligibility.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationBatch {
    dim: usize,
    vectors: Vec<f64>,
    domain_ids: Vec<usize>,
    class_ids: Vec<usize>,
    eligible: Vec<bool>,
}

impl RepresentationBatch {
    /// Requires every vector to have unit norm (within [`UNIT_NORM_TOL`]).
    pub fn new(
        vectors: Vec<Vec<f64>>,
        domain_ids: Vec<usize>,
        class_ids: Vec<usize>,
        eligible: Vec<bool>,
    ) -> Result<Self> {
        let batch = Self::from_unnormalized(vectors, domain_ids, class_ids, eligible)?;
        for s in 0..batch.len() {
            let n = norm(batch.vector(s));
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Domain(format!("vector {s} has norm {n}, expected 1")));
            }
        }
        Ok(batch)
    }

    /// Same as [`new`](Self::new) without the unit-norm requirement. The
    /// loss is well defined for any finite nonzero vectors; this is what
    /// finite-difference checks perturb.
    pub fn from_unnormalized(
        vectors: Vec<Vec<f64>>,
        domain_ids: Vec<usize>,
        class_ids: Vec<usize>,
        eligible: Vec<bool>,
    ) -> Result<Self> {
        let n = vectors.len();
        if domain_ids.len() != n || class_ids.len() != n || eligible.len() != n {
            return Err(Error::Domain("vectors, domain_ids, class_ids and eligible must have equal length".into()));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * dim);
        for (s, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Domain(format!("vector {s} has dimension {}, expected {dim}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("vector {s} has a non-finite coordinate")));
            }
            flat.extend_from_slice(v);
        }
        Ok(Self { dim, vectors: flat, domain_ids, class_ids, eligible })
    }

    pub fn len(&self) -> usize {
        self.domain_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, s: usize) -> &[f64] {
        &self.vectors[s * self.dim..(s + 1) * self.dim]
    }

    pub fn domain_id(&self, s: usize) -> usize {
        self.domain_ids[s]
    }

    pub fn class_id(&self, s: usize) -> usize {
        self.class_ids[s]
    }

    pub fn is_eligible(&self, s: usize) -> bool {
        self.eligible[s]
    }

    pub fn domain_ids(&self) -> &[usize] {
        &self.domain_ids
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn eligibility(&self) -> &[bool] {
        &self.eligible
    }

    /// Copy with the vectors replaced (same layout, unchecked norms).
    pub fn with_vectors(&self, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != self.vectors.len() {
            return Err(Error::Domain("replacement vectors have the wrong length".into()));
        }
        Ok(Self { vectors, ..self.clone() })
    }

    pub fn flat_vectors(&self) -> &[f64] {
        &self.vectors
    }

    fn eligible_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&s| self.eligible[s])
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// A group statistic that may be missing.
#[derive(Debug, Clone, PartialEq)]
pub enum Group {
    Present(Vec<f64>),
    /// No eligible members.
    Absent,
    /// Members exist but their mean has (near) zero norm.
    Degenerate,
}

impl Group {
    pub fn vector(&self) -> Option<&[f64]> {
        match self {
            Group::Present(v) => Some(v),
            _ => None,
        }
    }
}

/// Unit centroids of the loss groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCentroids {
    /// Domains with at least one eligible sample, ascending.
    pub domains: Vec<usize>,
    /// `cls[j]` for classes `0..num_classes`.
    pub cls: Vec<Group>,
    /// `dom_minus[k][j]` for `domains[k]`.
    pub dom_minus: Vec<Vec<Group>>,
    /// `dom_same[k][j]`: eligible members of `domains[k]` in class `j`.
    pub dom_same: Vec<Vec<Group>>,
}

pub fn group_centroids(batch: &RepresentationBatch) -> Result<GroupCentroids> {
    let sums = GroupSums::build(batch, SimilarityMode::Centroid)?;
    let mk = |sum: &[f64], count: usize| -> Group {
        if count == 0 {
            Group::Absent
        } else if norm(sum) / (count as f64) < DEGENERATE_NORM {
            Group::Degenerate
        } else {
            let n = norm(sum);
            Group::Present(sum.iter().map(|x| x / n).collect())
        }
    };
    let c = sums.num_classes;
    let cls = (0..c).map(|j| mk(&sums.class_sum[j], sums.class_count[j])).collect();
    let dom_minus = (0..sums.domains.len())
        .map(|k| (0..c).map(|j| mk(&sums.minus_sum[k][j], sums.minus_count[k][j])).collect())
        .collect();
    let dom_same = (0..sums.domains.len())
        .map(|k| (0..c).map(|j| mk(&sums.same_sum[k][j], sums.same_count[k][j])).collect())
        .collect();
    Ok(GroupCentroids { domains: sums.domains.clone(), cls, dom_minus, dom_same })
}

/// Per-domain contribution to the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTerm {
    pub domain: usize,
    pub value: f64,
    /// Number of classes that entered the inner sum (`c_i`).
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// True when the batch had fewer than two eligible classes (or no usable
    /// group pair); `value` is then exactly 0.
    pub skipped: bool,
    pub domain_terms: Vec<DomainTerm>,
}

impl LossOutput {
    fn skipped() -> Self {
        Self { value: 0.0, skipped: true, domain_terms: Vec::new() }
    }
}

/// Repel-only per-domain term from its similarities, with the derivative
/// of the term with respect to each similarity.
pub fn repel_term(sims: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    let (lse, soft) = log_softmax_parts(&logits);
    (lse - 1.0 / tau, soft.into_iter().map(|w| w / tau).collect())
}

/// With-positives per-domain term; returns the value, the derivative with
/// respect to the positive similarity and those for each negative.
pub fn positive_term(positive: f64, negatives: &[f64], tau: f64) -> (f64, f64, Vec<f64>) {
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(positive / tau);
    logits.extend(negatives.iter().map(|s| s / tau));
    let (lse, soft) = log_softmax_parts(&logits);
    let d_pos = (soft[0] - 1.0) / tau;
    let d_neg = soft[1..].iter().map(|w| w / tau).collect();
    (lse - positive / tau, d_pos, d_neg)
}

/// Max-shifted log-sum-exp and the matching softmax weights.
fn log_softmax_parts(logits: &[f64]) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    (m + total.ln(), exps.into_iter().map(|e| e / total).collect())
}

/// Group sums for one batch. In centroid mode the sums are over raw
/// vectors; in mean-pairwise mode over per-sample normalized vectors,
/// because `mean_{a,b} cos(a, b) = (sum_a a_hat) . (sum_b b_hat) / (n_a n_b)`.
struct GroupSums {
    mode: SimilarityMode,
    num_classes: usize,
    domains: Vec<usize>,
    /// Dense domain index per sample (eligible samples only).
    domain_index: Vec<Option<usize>>,
    same_sum: Vec<Vec<Vec<f64>>>,
    same_count: Vec<Vec<usize>>,
    minus_sum: Vec<Vec<Vec<f64>>>,
    minus_count: Vec<Vec<usize>>,
    class_sum: Vec<Vec<f64>>,
    class_count: Vec<usize>,
    distinct_classes: usize,
}

impl GroupSums {
    fn build(batch: &RepresentationBatch, mode: SimilarityMode) -> Result<Self> {
        let dim = batch.dim();
        let eligible: Vec<usize> = batch.eligible_indices().collect();
        if eligible.is_empty() {
            return Err(Error::Domain("no eligible samples".into()));
        }
        let domains: Vec<usize> =
            eligible.iter().map(|&s| batch.domain_id(s)).collect::<BTreeSet<_>>().into_iter().collect();
        let distinct_classes = eligible.iter().map(|&s| batch.class_id(s)).collect::<BTreeSet<_>>().len();
        let num_classes = eligible.iter().map(|&s| batch.class_id(s)).max().unwrap() + 1;
        let mut domain_index = vec![None; batch.len()];
        let mut same_sum = vec![vec![vec![0.0; dim]; num_classes]; domains.len()];
        let mut same_count = vec![vec![0usize; num_classes]; domains.len()];
        for &s in &eligible {
            let k = domains.binary_search(&batch.domain_id(s)).unwrap();
            domain_index[s] = Some(k);
            let c = batch.class_id(s);
            let v = batch.vector(s);
            let scale = match mode {
                SimilarityMode::Centroid => 1.0,
                SimilarityMode::MeanPairwise => {
                    let n = norm(v);
                    if n == 0.0 {
                        return Err(Error::Domain(format!("vector {s} is zero")));
                    }
                    1.0 / n
                }
            };
            for (acc, x) in same_sum[k][c].iter_mut().zip(v) {
                *acc += x * scale;
            }
            same_count[k][c] += 1;
        }
        let mut minus_sum = vec![vec![vec![0.0; dim]; num_classes]; domains.len()];
        let mut minus_count = vec![vec![0usize; num_classes]; domains.len()];
        for k in 0..domains.len() {
            for j in 0..num_classes {
                for other in (0..num_classes).filter(|&o| o != j) {
                    for (acc, x) in minus_sum[k][j].iter_mut().zip(&same_sum[k][other]) {
                        *acc += x;
                    }
                    minus_count[k][j] += same_count[k][other];
                }
            }
        }
        let mut class_sum = vec![vec![0.0; dim]; num_classes];
        let mut class_count = vec![0usize; num_classes];
        for k in 0..domains.len() {
            for j in 0..num_classes {
                for (acc, x) in class_sum[j].iter_mut().zip(&same_sum[k][j]) {
                    *acc += x;
                }
                class_count[j] += same_count[k][j];
            }
        }
        Ok(Self {
            mode,
            num_classes,
            domains,
            domain_index,
            same_sum,
            same_count,
            minus_sum,
            minus_count,
            class_sum,
            class_count,
            distinct_classes,
        })
    }

    fn usable(&self, sum: &[f64], count: usize) -> bool {
        match self.mode {
            SimilarityMode::Centroid => count > 0 && norm(sum) / count as f64 >= DEGENERATE_NORM,
            SimilarityMode::MeanPairwise => count > 0,
        }
    }

    /// Similarity of two groups and its gradients with respect to the two sums.
    fn similarity(&self, a: &[f64], na: usize, b: &[f64], nb: usize) -> (f64, Vec<f64>, Vec<f64>) {
        match self.mode {
            SimilarityMode::Centroid => {
                let (la, lb) = (norm(a), norm(b));
                let s = dot(a, b) / (la * lb);
                let ga = a.iter().zip(b).map(|(x, y)| y / (la * lb) - s * x / (la * la)).collect();
                let gb = a.iter().zip(b).map(|(x, y)| x / (la * lb) - s * y / (lb * lb)).collect();
                (s, ga, gb)
            }
            SimilarityMode::MeanPairwise => {
                let denom = (na * nb) as f64;
                let s = dot(a, b) / denom;
                (s, b.iter().map(|y| y / denom).collect(), a.iter().map(|x| x / denom).collect())
            }
        }
    }
}

fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

/// Value and gradient with respect to the batch vectors (`n * dim`,
/// row-major), for whichever variant `cfg` selects.
pub fn fixclr_loss_and_grad(batch: &RepresentationBatch, cfg: &FixClrConfig) -> Result<(LossOutput, Vec<f64>)> {
    cfg.validate()?;
    let dim = batch.dim();
    let mut grad = vec![0.0; batch.len() * dim];
    if batch.eligible_indices().next().is_none() {
        return Ok((LossOutput::skipped(), grad));
    }
    let sums = GroupSums::build(batch, cfg.similarity)?;
    if sums.distinct_classes < 2 {
        return Ok((LossOutput::skipped(), grad));
    }
    let tau = cfg.temperature;
    let c = sums.num_classes;
    // Gradient with respect to same_sum[k][j]; every other group sum is a
    // linear combination of these.
    let mut g_same = vec![vec![vec![0.0; dim]; c]; sums.domains.len()];
    let mut terms = Vec::new();
    let mut total = 0.0;

    for (k, &domain) in sums.domains.iter().enumerate() {
        let mut neg_classes = Vec::new();
        let mut neg = Vec::new();
        for j in 0..c {
            if sums.usable(&sums.minus_sum[k][j], sums.minus_count[k][j])
                && sums.usable(&sums.class_sum[j], sums.class_count[j])
            {
                let sim = sums.similarity(
                    &sums.minus_sum[k][j],
                    sums.minus_count[k][j],
                    &sums.class_sum[j],
                    sums.class_count[j],
                );
                neg_classes.push(j);
                neg.push(sim);
            }
        }
        let neg_values: Vec<f64> = neg.iter().map(|n| n.0).collect();
        let (value, d_neg, pos) = match cfg.variant {
            Variant::RepelOnly => {
                if neg.is_empty() {
                    continue;
                }
                let (v, d) = repel_term(&neg_values, tau);
                (v, d, None)
            }
            Variant::WithPositives => {
                let mut pos_classes = Vec::new();
                let mut pos = Vec::new();
                for j in 0..c {
                    if sums.usable(&sums.same_sum[k][j], sums.same_count[k][j])
                        && sums.usable(&sums.class_sum[j], sums.class_count[j])
                    {
                        pos_classes.push(j);
                        pos.push(sums.similarity(
                            &sums.same_sum[k][j],
                            sums.same_count[k][j],
                            &sums.class_sum[j],
                            sums.class_count[j],
                        ));
                    }
                }
                if pos.is_empty() {
                    continue;
                }
                let p = pos.iter().map(|x| x.0).sum::<f64>() / pos.len() as f64;
                let (v, d_pos, d_neg) = positive_term(p, &neg_values, tau);
                (v, d_neg, Some((d_pos / pos.len() as f64, pos_classes, pos)))
            }
        };
        total += value;
        terms.push(DomainTerm { domain, value, pairs: neg.len() });

        for ((&j, (_, ga, gb)), w) in neg_classes.iter().zip(&neg).zip(&d_neg) {
            // DOM_minus[k][j] = sum over classes o != j of same_sum[k][o].
            for o in (0..c).filter(|&o| o != j) {
                axpy(&mut g_same[k][o], *w, ga);
            }
            // CLS_j = sum over domains of same_sum[.][j].
            for g in g_same.iter_mut() {
                axpy(&mut g[j], *w, gb);
            }
        }
        if let Some((w, pos_classes, pos)) = pos {
            for (&j, (_, ga, gb)) in pos_classes.iter().zip(&pos) {
                axpy(&mut g_same[k][j], w, ga);
                for g in g_same.iter_mut() {
                    axpy(&mut g[j], w, gb);
                }
            }
        }
    }
    if terms.is_empty() {
        return Ok((LossOutput::skipped(), grad));
    }

    for s in 0..batch.len() {
        let Some(k) = sums.domain_index[s] else { continue };
        let g = &g_same[k][batch.class_id(s)];
        let out = &mut grad[s * dim..(s + 1) * dim];
        match sums.mode {
            SimilarityMode::Centroid => out.copy_from_slice(g),
            SimilarityMode::MeanPairwise => {
                // d(v / |v|) / dv = (I - u u^T) / |v|
                let v = batch.vector(s);
                let n = norm(v);
                let proj = dot(v, g) / (n * n);
                for ((o, gi), vi) in out.iter_mut().zip(g).zip(v) {
                    *o = (gi - proj * vi) / n;
                }
            }
        }
    }
    Ok((LossOutput { value: total, skipped: false, domain_terms: terms }, grad))
}

/// Repel-only loss value. `cfg.variant` must be [`Variant::RepelOnly`].
pub fn fixclr_loss(batch: &RepresentationBatch, cfg: &FixClrConfig) -> Result<LossOutput> {
    if cfg.variant != Variant::RepelOnly {
        return Err(Error::Config("fixclr_loss requires the repel_only variant".into()));
    }
    fixclr_loss_and_grad(batch, cfg).map(|(out, _)| out)
}

/// Positive-attraction ablation. `cfg.variant` must be [`Variant::WithPositives`].
pub fn fixclr_loss_with_positives(batch: &RepresentationBatch, cfg: &FixClrConfig) -> Result<LossOutput> {
    if cfg.variant != Variant::WithPositives {
        return Err(Error::Config("fixclr_loss_with_positives requires the with_positives variant".into()));
    }
    fixclr_loss_and_grad(batch, cfg).map(|(out, _)| out)
}

#[cfg(test)]
mod tests;
