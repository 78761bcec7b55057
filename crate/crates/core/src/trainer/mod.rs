//! FixMatch training with an optional contrastive regularizer.
//!
//! Each step draws a domain-stratified labeled batch and an unlabeled batch,
//! takes exactly three forward passes (labeled weak, unlabeled weak,
//! unlabeled strong) and minimizes
//!
//! ```text
//! L = L_S + L_U + loss_weight * L_C
//! ```
//!
//! where `L_S` is cross-entropy on labeled weak views, `L_U` is the mean
//! cross-entropy of kept unlabeled strong views against weak-view
//! pseudo-labels, and `L_C` is the regularizer over labeled weak-view
//! projections (true classes) and kept unlabeled strong-view projections
//! (pseudo classes). Weak unlabeled views carry no gradient.

mod schedule;
mod sgd;

use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentParams, AugmentationPolicy};
use crate::data::{MultiDomainDataset, Sample, SplitSpec, StratifiedSampler};
use crate::error::{Error, Result};
use crate::loss::{fixclr_loss_and_grad, FixClrConfig, RepresentationBatch, Variant};
use crate::metrics::{domain_probe_accuracy, embedding_dump, target_accuracy, EpochRow, ProbeKind, RunInfo, RunMetrics};
use crate::model::{Activation, ForwardCounter, Model, ModelConfig, Upstream};
use crate::pseudo_label::{
    keep_ratio, predict_pseudo_labels, predict_pseudo_labels_with, pseudo_label_quality, softmax, PseudoLabelBatch,
    ThresholdPlugin, ThresholdPolicy,
};
use crate::rng::{self, streams, Rng};

pub use schedule::cosine_lr;
pub use sgd::Sgd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// Plain FixMatch.
    None,
    #[default]
    Fixclr,
    FixclrWithPositives,
}

impl Regularizer {
    pub fn name(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Fixclr => "fixclr",
            Regularizer::FixclrWithPositives => "fixclr_with_positives",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Regularizer::None, Regularizer::Fixclr, Regularizer::FixclrWithPositives].into_iter().find(|r| r.name() == s)
    }
}

/// Which vectors the regularizer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveInput {
    /// Unit-normalized projection head output.
    #[default]
    Projection,
    /// Unit-normalized encoder representation.
    Encoder,
}

/// Which unlabeled view feeds the regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnlabeledView {
    #[default]
    Strong,
    Weak,
}

/// Architecture settings; input and class counts come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub encoder_widths: Vec<usize>,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub activation: Activation,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1);
        Self {
            encoder_widths: m.encoder_widths,
            projection_hidden: m.projection_hidden,
            projection_dim: m.projection_dim,
            activation: m.activation,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            num_classes,
            encoder_widths: self.encoder_widths.clone(),
            projection_hidden: self.projection_hidden,
            projection_dim: self.projection_dim,
            activation: self.activation,
            init: Default::default(),
        }
    }
}

/// Per-epoch evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    /// Unlabeled source samples used for pseudo-label statistics and the
    /// domain probe (fixed for the whole run).
    pub size: usize,
    pub folds: usize,
    pub kind: ProbeKind,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { size: 600, folds: 5, kind: ProbeKind::Linear }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Defaults to `ceil(|unlabeled| / (mu * batch_size))`.
    pub steps_per_epoch: Option<usize>,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub mu: usize,
    pub threshold: ThresholdPolicy,
    pub regularizer: Regularizer,
    /// `variant` is overridden by `regularizer`.
    pub fixclr: FixClrConfig,
    pub contrastive_input: ContrastiveInput,
    pub unlabeled_view: UnlabeledView,
    pub augment: AugmentParams,
    pub model: ModelSettings,
    pub probe: ProbeSettings,
    /// Reserved; parameter averaging is not implemented and must stay off.
    pub ema: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            steps_per_epoch: None,
            base_lr: 0.003,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 48,
            mu: 1,
            threshold: ThresholdPolicy::default(),
            regularizer: Regularizer::default(),
            fixclr: FixClrConfig::default(),
            contrastive_input: ContrastiveInput::default(),
            unlabeled_view: UnlabeledView::default(),
            augment: AugmentParams::default(),
            model: ModelSettings::default(),
            probe: ProbeSettings::default(),
            ema: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must be in [0, 1) and weight_decay >= 0".into());
        }
        if self.batch_size == 0 || self.mu == 0 || self.steps_per_epoch == Some(0) {
            return bad("batch_size, mu and steps_per_epoch must be positive".into());
        }
        if self.ema {
            return bad("ema is reserved and not implemented".into());
        }
        if self.probe.folds < 2 {
            return bad("probe.folds must be >= 2".into());
        }
        self.threshold.validate()?;
        self.fixclr.validate()?;
        self.augment.validate()
    }

    /// Regularizer settings with the variant implied by `regularizer`.
    pub fn effective_fixclr(&self) -> Option<FixClrConfig> {
        let variant = match self.regularizer {
            Regularizer::None => return None,
            Regularizer::Fixclr => Variant::RepelOnly,
            Regularizer::FixclrWithPositives => Variant::WithPositives,
        };
        Some(FixClrConfig { variant, ..self.fixclr })
    }

    pub fn steps_per_epoch(&self, split: &SplitSpec) -> usize {
        self.steps_per_epoch.unwrap_or_else(|| split.unlabeled_ids.len().div_ceil(self.mu * self.batch_size).max(1))
    }
}

/// Bookkeeping for one optimizer step. `loss_c` is the weighted term that
/// enters `total`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_s: f64,
    pub loss_u: f64,
    pub loss_c: f64,
    pub total: f64,
    pub lr: f64,
    pub keep_ratio: f64,
    pub forward_passes: u64,
    pub contrastive_skipped: bool,
}

/// Mutable training state threaded through [`train_step`].
pub struct StepContext<'a> {
    pub optimizer: &'a mut Sgd,
    pub rng: &'a mut Rng,
    pub plugin: Option<&'a mut dyn ThresholdPlugin>,
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
}

fn views(samples: &[&Sample], policy: AugmentationPolicy, rng: &mut Rng, dim: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        flat.extend(policy.apply(&s.features, rng)?);
    }
    Ok(Array2::from_shape_vec((samples.len(), dim), flat).expect("augmentation preserves shape"))
}

/// Mean cross-entropy over `rows` (weighted), with the gradient wrt logits.
fn cross_entropy(logits: &Array2<f64>, rows: &[(usize, usize, f64)], out: &mut Array2<f64>) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let n = rows.len() as f64;
    let mut total = 0.0;
    for &(i, target, w) in rows {
        let p = softmax(logits.row(i).as_slice().expect("contiguous"));
        total += -w * p[target].max(f64::MIN_POSITIVE).ln();
        for (c, pc) in p.iter().enumerate() {
            out[[i, c]] += w * (pc - f64::from(u8::from(c == target))) / n;
        }
    }
    total / n
}

/// Unit rows of `m` and the row norms; zero rows stay zero.
fn normalize_rows(m: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.nrows());
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
        norms.push(n);
    }
    (out, norms)
}

/// Contrastive vectors for one forward pass: `(unit rows, norms)` where the
/// norms are only needed for encoder inputs (projection rows are already
/// unit and backprop through their normalization inside the model).
fn contrastive_vectors(
    fwd: &crate::model::BatchForward,
    input: ContrastiveInput,
) -> (Array2<f64>, Option<Vec<f64>>) {
    match input {
        ContrastiveInput::Projection => (fwd.projected.clone(), None),
        ContrastiveInput::Encoder => {
            let (u, n) = normalize_rows(fwd.representation());
            (u, Some(n))
        }
    }
}

/// Pulls a gradient wrt unit rows back to the unnormalized rows.
fn through_normalization(unit: &Array2<f64>, norms: &[f64], grad: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    for ((mut g, u), n) in out.rows_mut().into_iter().zip(unit.rows()).zip(norms) {
        if *n > 0.0 {
            let along = g.dot(&u);
            g.scaled_add(-along, &u);
            g /= *n;
        } else {
            g.fill(0.0);
        }
    }
    out
}

/// One optimizer step on a labeled batch and an unlabeled batch.
pub fn train_step(
    model: &mut Model,
    labeled: &[&Sample],
    unlabeled: &[&Sample],
    cfg: &TrainConfig,
    ctx: StepContext<'_>,
) -> Result<StepRecord> {
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::Domain("train_step needs non-empty labeled and unlabeled batches".into()));
    }
    let dim = model.config().input_dim;
    let weak = AugmentationPolicy::weak(cfg.augment);
    let strong = AugmentationPolicy::strong(cfg.augment);
    let x_lw = views(labeled, weak, ctx.rng, dim)?;
    let x_uw = views(unlabeled, weak, ctx.rng, dim)?;
    let x_us = views(unlabeled, strong, ctx.rng, dim)?;

    let mut grad = model.zeros_like();
    let mut counter = ForwardCounter::new(model);
    let f_lw = counter.forward_batch(&x_lw)?;
    let f_uw = counter.forward_batch(&x_uw)?;
    let f_us = counter.forward_batch(&x_us)?;
    let forward_passes = counter.passes();

    // Supervised term.
    let mut d_lw = Array2::zeros(f_lw.logits.raw_dim());
    let sup: Vec<(usize, usize, f64)> = labeled.iter().enumerate().map(|(i, s)| (i, s.class_id, 1.0)).collect();
    let loss_s = cross_entropy(&f_lw.logits, &sup, &mut d_lw);

    // Pseudo-labels from the weak unlabeled view.
    let weak_logits: Vec<Vec<f64>> = f_uw.logits.rows().into_iter().map(|r| r.to_vec()).collect();
    let pl: PseudoLabelBatch = match ctx.plugin {
        Some(p) => predict_pseudo_labels_with(&weak_logits, p, ctx.step)?,
        None => predict_pseudo_labels(&weak_logits, &cfg.threshold)?,
    };
    let kept: Vec<(usize, usize, f64)> =
        (0..pl.len()).filter(|&i| pl.keep_mask[i]).map(|i| (i, pl.predicted_class[i], pl.weight(i))).collect();
    let mut d_us = Array2::zeros(f_us.logits.raw_dim());
    let loss_u = cross_entropy(&f_us.logits, &kept, &mut d_us);

    // Regularizer.
    let mut loss_c = 0.0;
    let mut contrastive_skipped = true;
    let mut d_c_l: Option<Array2<f64>> = None;
    let mut d_c_u: Option<Array2<f64>> = None;
    let mut d_c_uw: Option<Array2<f64>> = None;
    if let Some(fc) = cfg.effective_fixclr() {
        let u_fwd = match cfg.unlabeled_view {
            UnlabeledView::Strong => &f_us,
            UnlabeledView::Weak => &f_uw,
        };
        let (vl, nl) = contrastive_vectors(&f_lw, cfg.contrastive_input);
        let (vu, nu) = contrastive_vectors(u_fwd, cfg.contrastive_input);
        let n_l = labeled.len();
        let mut vectors = Vec::with_capacity(n_l + unlabeled.len());
        let mut domains = Vec::with_capacity(vectors.capacity());
        let mut classes = Vec::with_capacity(vectors.capacity());
        let mut eligible = Vec::with_capacity(vectors.capacity());
        for (i, s) in labeled.iter().enumerate() {
            let usable = nl.as_ref().is_none_or(|n| n[i] > 0.0);
            vectors.push(if usable { vl.row(i).to_vec() } else { unit_e0(vl.ncols()) });
            domains.push(s.domain_id);
            classes.push(s.class_id);
            eligible.push(usable);
        }
        for (i, s) in unlabeled.iter().enumerate() {
            let usable = nu.as_ref().is_none_or(|n| n[i] > 0.0);
            vectors.push(if usable { vu.row(i).to_vec() } else { unit_e0(vu.ncols()) });
            domains.push(s.domain_id);
            classes.push(pl.predicted_class[i]);
            eligible.push(usable && pl.keep_mask[i]);
        }
        let batch = RepresentationBatch::new(vectors, domains, classes, eligible)?;
        let (out, g) = fixclr_loss_and_grad(&batch, &fc)?;
        contrastive_skipped = out.skipped;
        loss_c = fc.loss_weight * out.value;
        if !out.skipped && fc.loss_weight > 0.0 {
            let p = vl.ncols();
            let g = Array2::from_shape_vec((batch.len(), p), g).expect("gradient layout").mapv_into(|x| x * fc.loss_weight);
            let gl = g.slice(ndarray::s![..n_l, ..]).to_owned();
            let gu = g.slice(ndarray::s![n_l.., ..]).to_owned();
            let (gl, gu) = match (&nl, &nu) {
                (Some(nl), Some(nu)) => (through_normalization(&vl, nl, &gl), through_normalization(&vu, nu, &gu)),
                _ => (gl, gu),
            };
            d_c_l = Some(gl);
            match cfg.unlabeled_view {
                UnlabeledView::Strong => d_c_u = Some(gu),
                UnlabeledView::Weak => d_c_uw = Some(gu),
            }
        }
    }

    let total = loss_s + loss_u + loss_c;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss at step {} (epoch {}): L_S={loss_s} L_U={loss_u} L_C={loss_c} lr={}",
            ctx.step, ctx.epoch, ctx.lr
        )));
    }

    // Unlabeled rows below the threshold receive no gradient from either
    // term, so only kept rows are backpropagated.
    let input = cfg.contrastive_input;
    model.backward(&f_lw, &upstream(input, Some(&d_lw), d_c_l.as_ref()), &mut grad);
    let rows: Vec<usize> = kept.iter().map(|k| k.0).collect();
    if !rows.is_empty() {
        let pick = |m: &Array2<f64>| m.select(ndarray::Axis(0), &rows);
        let d_us = pick(&d_us);
        let d_c_u = d_c_u.as_ref().map(pick);
        model.backward(&f_us.select(&rows), &upstream(input, Some(&d_us), d_c_u.as_ref()), &mut grad);
        if let Some(d) = d_c_uw.as_ref().map(pick) {
            model.backward(&f_uw.select(&rows), &upstream(input, None, Some(&d)), &mut grad);
        }
    }
    ctx.optimizer.step(model, &grad, ctx.lr);

    Ok(StepRecord {
        step: ctx.step,
        epoch: ctx.epoch,
        loss_s,
        loss_u,
        loss_c,
        total,
        lr: ctx.lr,
        keep_ratio: keep_ratio(&pl)?,
        forward_passes,
        contrastive_skipped,
    })
}

fn upstream<'a>(
    input: ContrastiveInput,
    logits: Option<&'a Array2<f64>>,
    c: Option<&'a Array2<f64>>,
) -> Upstream<'a> {
    match input {
        ContrastiveInput::Projection => Upstream { logits, projected: c, representation: None },
        ContrastiveInput::Encoder => Upstream { logits, projected: None, representation: c },
    }
}

fn unit_e0(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = 1.0;
    v
}

/// State to continue a run from a completed epoch.
#[derive(Debug, Clone)]
pub struct ResumeState {
    pub model: Model,
    pub velocity: Model,
    pub epochs_done: usize,
    pub epochs: Vec<EpochRow>,
    pub steps: Vec<StepRecord>,
}

/// What the epoch callback sees.
pub struct EpochEnd<'a> {
    pub row: &'a EpochRow,
    pub steps: &'a [StepRecord],
    pub model: &'a Model,
    pub velocity: &'a Model,
}

#[derive(Default)]
pub struct FitOptions<'a> {
    pub resume: Option<ResumeState>,
    pub plugin: Option<&'a mut dyn ThresholdPlugin>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochEnd<'_>) -> Result<()>>,
    /// Stop after this many epochs in this call (the schedule still spans
    /// `cfg.epochs`); used to simulate interruption.
    pub stop_after: Option<usize>,
}

pub struct FitResult {
    pub model: Model,
    pub velocity: Model,
    pub metrics: RunMetrics,
}

/// FNV-1a over the dataset content and the split's labeled ids; identifies
/// the benchmark a run belongs to.
pub fn benchmark_id(ds: &MultiDomainDataset, n_labels: usize) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for s in ds.samples() {
        eat(s.sample_id);
        eat(s.domain_id as u64);
        eat(s.class_id as u64);
        s.features.iter().for_each(|v| eat(v.to_bits()));
    }
    format!("{h:016x}-n{n_labels}")
}

/// Fixed subset of unlabeled source samples used for per-epoch statistics.
pub fn probe_subset<'a>(ds: &'a MultiDomainDataset, split: &SplitSpec, size: usize, seed: u64) -> Vec<&'a Sample> {
    let idx = ds.index();
    let mut ids: Vec<u64> = split.unlabeled_ids.iter().copied().collect();
    ids.shuffle(&mut rng::stream(seed, streams::PROBE_SUBSET));
    ids.truncate(size);
    ids.sort_unstable();
    ids.into_iter().map(|id| &ds.samples()[idx[&id]]).collect()
}

pub fn fit(ds: &MultiDomainDataset, split: &SplitSpec, cfg: &TrainConfig) -> Result<FitResult> {
    fit_with(ds, split, cfg, FitOptions::default())
}

pub fn fit_with(ds: &MultiDomainDataset, split: &SplitSpec, cfg: &TrainConfig, mut opts: FitOptions<'_>) -> Result<FitResult> {
    cfg.validate()?;
    if matches!(cfg.threshold, ThresholdPolicy::Plugin { .. }) && opts.plugin.is_none() {
        return Err(Error::Config("threshold policy names a plugin but none was supplied".into()));
    }
    if split.source_domains.contains(&split.target_domain) {
        return Err(Error::Data("target domain is listed as a source".into()));
    }
    let model_cfg = cfg.model.model_config(ds.feature_dim(), ds.num_classes());
    let (mut model, velocity, start, mut epochs, mut steps) = match opts.resume.take() {
        Some(r) => (r.model, r.velocity, r.epochs_done, r.epochs, r.steps),
        None => {
            let m = Model::new(model_cfg, cfg.seed)?;
            let v = m.zeros_like();
            (m, v, 0, Vec::new(), Vec::new())
        }
    };
    let mut optimizer = Sgd { momentum: cfg.momentum, weight_decay: cfg.weight_decay, velocity };

    let steps_per_epoch = cfg.steps_per_epoch(split);
    let total_steps = cfg.epochs * steps_per_epoch;
    let target: Vec<&Sample> = ds.domain_samples(split.target_domain).collect();
    let probe = probe_subset(ds, split, cfg.probe.size, cfg.seed);
    let probe_truth: Vec<usize> = probe.iter().map(|s| s.class_id).collect();
    let end = opts.stop_after.map_or(cfg.epochs, |n| (start + n).min(cfg.epochs));

    for epoch in start..end {
        let mut rng = rng::stream(cfg.seed, streams::EPOCH_BASE + epoch as u64);
        let mut sampler = StratifiedSampler::new(ds, split, cfg.batch_size, cfg.mu)?;
        let mut epoch_steps = Vec::with_capacity(steps_per_epoch);
        let t0 = Instant::now();
        for i in 0..steps_per_epoch {
            let step = epoch * steps_per_epoch + i;
            let lr = cosine_lr(step, total_steps, cfg.base_lr)?;
            let batch = sampler.next_batch(&mut rng);
            let ctx = StepContext {
                optimizer: &mut optimizer,
                rng: &mut rng,
                plugin: opts.plugin.as_deref_mut().map(|p| p as &mut dyn ThresholdPlugin),
                step,
                epoch,
                lr,
            };
            epoch_steps.push(train_step(&mut model, &batch.labeled, &batch.unlabeled, cfg, ctx)?);
        }
        let epoch_seconds = t0.elapsed().as_secs_f64();

        // Evaluation only: no gradients, no parameter updates.
        let target_accuracy = target_accuracy(&model, &target)?;
        let dump = embedding_dump(&model, &probe, None)?;
        let probe_logits: Vec<Vec<f64>> = {
            let x = crate::model::rows_to_array(&probe.iter().map(|s| s.features.clone()).collect::<Vec<_>>(), ds.feature_dim())?;
            model.forward_batch(&x)?.logits.rows().into_iter().map(|r| r.to_vec()).collect()
        };
        // Plugin thresholds are step-dependent; epoch statistics for plugin
        // runs use the default fixed threshold as a stable reference.
        let threshold = match &cfg.threshold {
            ThresholdPolicy::Fixed { .. } => cfg.threshold.clone(),
            ThresholdPolicy::Plugin { .. } => ThresholdPolicy::default(),
        };
        let pl = predict_pseudo_labels(&probe_logits, &threshold)?;
        let n = epoch_steps.len() as f64;
        let row = EpochRow {
            epoch,
            target_accuracy,
            pl_quality: pseudo_label_quality(&pl, &probe_truth)?,
            pl_keep_ratio: keep_ratio(&pl)?,
            domain_probe_accuracy: domain_probe_accuracy(&dump, cfg.probe.folds, cfg.probe.kind, cfg.seed)?,
            mean_loss_s: epoch_steps.iter().map(|s| s.loss_s).sum::<f64>() / n,
            mean_loss_u: epoch_steps.iter().map(|s| s.loss_u).sum::<f64>() / n,
            mean_loss_c: epoch_steps.iter().map(|s| s.loss_c).sum::<f64>() / n,
            epoch_seconds,
            forward_pass_total: epoch_steps.iter().map(|s| s.forward_passes).sum(),
        };
        if let Some(cb) = opts.on_epoch.as_deref_mut() {
            cb(&EpochEnd { row: &row, steps: &epoch_steps, model: &model, velocity: &optimizer.velocity })?;
        }
        epochs.push(row);
        steps.extend(epoch_steps);
    }

    let info = RunInfo {
        method: cfg.regularizer.name().to_owned(),
        seed: cfg.seed,
        target_domain: split.target_domain,
        benchmark: benchmark_id(ds, split.n_labels),
    };
    Ok(FitResult { model, velocity: optimizer.velocity, metrics: RunMetrics { info, epochs, steps } })
}

/// Source-only ids of a split, for isolation checks.
pub fn training_ids(split: &SplitSpec) -> BTreeSet<u64> {
    split.labeled_ids.union(&split.unlabeled_ids).copied().collect()
}
