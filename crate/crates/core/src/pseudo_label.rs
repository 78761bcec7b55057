//! Confidence-thresholded pseudo-labels and their quality/quantity
//! statistics.
//!
//! Ground truth is only consumed by [`pseudo_label_quality`], which returns
//! a bare number; nothing on the training path accepts its output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelBatch {
    pub predicted_class: Vec<usize>,
    /// Max softmax probability per sample.
    pub confidence: Vec<f64>,
    pub keep_mask: Vec<bool>,
    pub threshold_used: f64,
    /// Per-sample loss weights from a plugin; `None` means all ones.
    pub weights: Option<Vec<f64>>,
}

impl PseudoLabelBatch {
    pub fn len(&self) -> usize {
        self.predicted_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted_class.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep_mask.iter().filter(|k| **k).count()
    }

    pub fn weight(&self, s: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[s])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdPolicy {
    Fixed { value: f64 },
    /// Resolved at run time to a [`ThresholdPlugin`] supplied by the caller.
    Plugin { name: String },
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Fixed { value: 0.95 }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            ThresholdPolicy::Fixed { value } if !(*value > 0.0 && *value <= 1.0) => {
                Err(Error::Config(format!("fixed threshold must be in (0, 1], got {value}")))
            }
            _ => Ok(()),
        }
    }
}

/// What a plugin decides for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginDecision {
    pub threshold: f64,
    pub weights: Option<Vec<f64>>,
}

/// Hook for adaptive thresholding / soft weighting schemes. The plugin
/// sees each batch of weak-view logits in training order (and may keep
/// its own history) together with the global step.
pub trait ThresholdPlugin: Send {
    fn name(&self) -> &str;
    fn decide(&mut self, logits: &[Vec<f64>], step: usize) -> PluginDecision;
}

/// Softmax of one logit row, max-shifted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn check_finite(logits: &[Vec<f64>]) -> Result<()> {
    for (i, row) in logits.iter().enumerate() {
        if row.is_empty() {
            return Err(Error::Domain(format!("logit row {i} is empty")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("logit row {i} is not finite")));
        }
    }
    Ok(())
}

fn label_with_threshold(logits: &[Vec<f64>], threshold: f64, weights: Option<Vec<f64>>) -> PseudoLabelBatch {
    let mut predicted_class = Vec::with_capacity(logits.len());
    let mut confidence = Vec::with_capacity(logits.len());
    for row in logits {
        let p = softmax(row);
        let k = argmax(&p);
        predicted_class.push(k);
        confidence.push(p[k]);
    }
    let keep_mask = confidence.iter().map(|c| *c >= threshold).collect();
    PseudoLabelBatch { predicted_class, confidence, keep_mask, threshold_used: threshold, weights }
}

/// Pseudo-labels under a fixed threshold. A plugin policy needs
/// [`predict_pseudo_labels_with`].
pub fn predict_pseudo_labels(logits: &[Vec<f64>], policy: &ThresholdPolicy) -> Result<PseudoLabelBatch> {
    policy.validate()?;
    check_finite(logits)?;
    match policy {
        ThresholdPolicy::Fixed { value } => Ok(label_with_threshold(logits, *value, None)),
        ThresholdPolicy::Plugin { name } => {
            Err(Error::Config(format!("threshold plugin {name:?} requires a plugin instance")))
        }
    }
}

pub fn predict_pseudo_labels_with(
    logits: &[Vec<f64>],
    plugin: &mut dyn ThresholdPlugin,
    step: usize,
) -> Result<PseudoLabelBatch> {
    check_finite(logits)?;
    let d = plugin.decide(logits, step);
    if !(d.threshold > 0.0 && d.threshold <= 1.0) {
        return Err(Error::Config(format!("plugin {} returned threshold {}", plugin.name(), d.threshold)));
    }
    if let Some(w) = &d.weights {
        if w.len() != logits.len() || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("plugin {} returned invalid weights", plugin.name())));
        }
    }
    Ok(label_with_threshold(logits, d.threshold, d.weights))
}

pub fn keep_ratio(batch: &PseudoLabelBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("keep ratio of an empty batch".into()));
    }
    Ok(batch.kept() as f64 / batch.len() as f64)
}

/// Accuracy of kept pseudo-labels against ground truth; `None` when no
/// sample was kept (undefined, not zero).
pub fn pseudo_label_quality(batch: &PseudoLabelBatch, truth: &[usize]) -> Result<Option<f64>> {
    if truth.len() != batch.len() {
        return Err(Error::Domain(format!("{} truth labels for {} pseudo-labels", truth.len(), batch.len())));
    }
    let kept = batch.kept();
    if kept == 0 {
        return Ok(None);
    }
    let correct = (0..batch.len()).filter(|&s| batch.keep_mask[s] && batch.predicted_class[s] == truth[s]).count();
    Ok(Some(correct as f64 / kept as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits_for(probs: &[f64]) -> Vec<f64> {
        probs.iter().map(|p| p.ln()).collect()
    }

    fn fixed(v: f64) -> ThresholdPolicy {
        ThresholdPolicy::Fixed { value: v }
    }

    #[test]
    fn confident_sample_is_kept() {
        let b = predict_pseudo_labels(&[logits_for(&[0.97, 0.03])], &fixed(0.95)).unwrap();
        assert_eq!(b.predicted_class, vec![0]);
        assert!(b.keep_mask[0]);
        assert!((b.confidence[0] - 0.97).abs() < 1e-12);
    }

    #[test]
    fn unconfident_sample_is_dropped() {
        let b = predict_pseudo_labels(&[logits_for(&[0.60, 0.40])], &fixed(0.95)).unwrap();
        assert_eq!(b.predicted_class, vec![0]);
        assert!(!b.keep_mask[0]);
    }

    #[test]
    fn uniform_logits_tie_to_lowest_class() {
        let b = predict_pseudo_labels(&[vec![0.3; 10]], &fixed(0.1000001)).unwrap();
        assert_eq!(b.predicted_class, vec![0]);
        assert_eq!(b.confidence[0], 0.1);
        assert!(!b.keep_mask[0]);
        let b = predict_pseudo_labels(&[vec![0.3; 10]], &fixed(0.5)).unwrap();
        assert!(!b.keep_mask[0]);
    }

    #[test]
    fn non_finite_logits_are_numeric_errors() {
        let err = predict_pseudo_labels(&[vec![0.0, f64::NAN]], &fixed(0.9)).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn invalid_threshold_rejected() {
        assert!(predict_pseudo_labels(&[vec![0.0, 1.0]], &fixed(0.0)).is_err());
        assert!(predict_pseudo_labels(&[vec![0.0, 1.0]], &fixed(1.5)).is_err());
    }

    fn batch_with_mask(mask: &[bool], pred: &[usize]) -> PseudoLabelBatch {
        PseudoLabelBatch {
            predicted_class: pred.to_vec(),
            confidence: vec![0.99; mask.len()],
            keep_mask: mask.to_vec(),
            threshold_used: 0.95,
            weights: None,
        }
    }

    #[test]
    fn keep_ratio_examples() {
        assert_eq!(keep_ratio(&batch_with_mask(&[true, false, true, false], &[0; 4])).unwrap(), 0.5);
        assert_eq!(keep_ratio(&batch_with_mask(&[true; 3], &[0; 3])).unwrap(), 1.0);
        assert_eq!(keep_ratio(&batch_with_mask(&[false; 3], &[0; 3])).unwrap(), 0.0);
        assert!(matches!(keep_ratio(&batch_with_mask(&[], &[])), Err(Error::Domain(_))));
    }

    #[test]
    fn quality_examples() {
        let b = batch_with_mask(&[true, true], &[1, 2]);
        assert_eq!(pseudo_label_quality(&b, &[1, 3]).unwrap(), Some(0.5));
        assert_eq!(pseudo_label_quality(&b, &[1, 2]).unwrap(), Some(1.0));
        let none = batch_with_mask(&[false, false], &[1, 2]);
        assert_eq!(pseudo_label_quality(&none, &[1, 2]).unwrap(), None);
        assert!(pseudo_label_quality(&b, &[1]).is_err());
    }

    struct Halving;
    impl ThresholdPlugin for Halving {
        fn name(&self) -> &str {
            "halving"
        }
        fn decide(&mut self, logits: &[Vec<f64>], step: usize) -> PluginDecision {
            PluginDecision { threshold: 0.9 / (1 + step) as f64, weights: Some(vec![0.5; logits.len()]) }
        }
    }

    #[test]
    fn plugin_hook_sets_threshold_and_weights() {
        let logits = vec![logits_for(&[0.6, 0.4]), logits_for(&[0.3, 0.7])];
        let b = predict_pseudo_labels_with(&logits, &mut Halving, 0).unwrap();
        assert_eq!(b.kept(), 0);
        let b = predict_pseudo_labels_with(&logits, &mut Halving, 1).unwrap();
        assert_eq!(b.threshold_used, 0.45);
        assert_eq!(b.keep_mask, vec![true, true]);
        assert_eq!(b.weight(1), 0.5);
        assert!(predict_pseudo_labels(&logits, &ThresholdPolicy::Plugin { name: "halving".into() }).is_err());
    }

    proptest! {
        #[test]
        fn raising_threshold_never_increases_keep_ratio(
            rows in prop::collection::vec(prop::collection::vec(-6.0f64..6.0, 3), 1..40),
            t1 in 0.05f64..1.0,
            t2 in 0.05f64..1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = predict_pseudo_labels(&rows, &fixed(lo)).unwrap();
            let b = predict_pseudo_labels(&rows, &fixed(hi)).unwrap();
            prop_assert!(keep_ratio(&b).unwrap() <= keep_ratio(&a).unwrap());
            for s in 0..rows.len() {
                prop_assert_eq!(a.keep_mask[s], a.confidence[s] >= lo);
                prop_assert!(a.confidence[s] >= 1.0 / 3.0 - 1e-12 && a.confidence[s] <= 1.0);
            }
        }
    }
}
