//! Multi-domain datasets: synthetic generation, label-budget splitting,
//! domain-stratified batch sampling and the on-disk format.

mod format;
mod sampler;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{read_dataset, write_dataset, DATASET_MAGIC};
pub use sampler::{mixed_domain_batch, MixedBatch, StratifiedSampler};
pub use split::{leave_one_domain_out_splits, split_for_target, SplitSpec};
pub use synth::{synth_generate, DomainShift, DomainTransform, SyntheticConfig};

pub type SampleId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: SampleId,
    pub domain_id: usize,
    pub class_id: usize,
    pub features: Vec<f64>,
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64, config: SyntheticConfig },
    External { path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiDomainDataset {
    samples: Vec<Sample>,
    num_domains: usize,
    num_classes: usize,
    feature_dim: usize,
    provenance: Provenance,
}

impl MultiDomainDataset {
    /// Validates ids, ranges and feature dimensions.
    pub fn new(
        samples: Vec<Sample>,
        num_domains: usize,
        num_classes: usize,
        feature_dim: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if num_domains == 0 || num_classes == 0 || feature_dim == 0 {
            return Err(Error::Data(format!(
                "dataset dimensions must be positive (D={num_domains}, C={num_classes}, F={feature_dim})"
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.domain_id >= num_domains || s.class_id >= num_classes {
                return Err(Error::Data(format!(
                    "sample {} has (domain {}, class {}) outside (D={num_domains}, C={num_classes})",
                    s.sample_id, s.domain_id, s.class_id
                )));
            }
            if s.features.len() != feature_dim {
                return Err(Error::Data(format!(
                    "sample {} has {} features, expected {feature_dim}",
                    s.sample_id,
                    s.features.len()
                )));
            }
            if !seen.insert(s.sample_id) {
                return Err(Error::Data(format!("duplicate sample_id {}", s.sample_id)));
            }
        }
        Ok(Self { samples, num_domains, num_classes, feature_dim, provenance })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Index from sample id to position in `samples()`.
    pub fn index(&self) -> std::collections::HashMap<SampleId, usize> {
        self.samples.iter().enumerate().map(|(i, s)| (s.sample_id, i)).collect()
    }

    pub fn domain_samples(&self, domain: usize) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.domain_id == domain)
    }
}

/// Source of datasets that do not come from the synthetic generator.
///
/// An adapter for an image benchmark decodes and featurizes its files and
/// hands back a validated [`MultiDomainDataset`] with `Provenance::External`.
/// The dataset file format itself is the built-in adapter
/// ([`FileAdapter`]).
pub trait DatasetAdapter {
    fn load(&self) -> Result<MultiDomainDataset>;
}

/// Loads a dataset written by [`write_dataset`].
pub struct FileAdapter {
    pub path: std::path::PathBuf,
}

impl DatasetAdapter for FileAdapter {
    fn load(&self) -> Result<MultiDomainDataset> {
        read_dataset(&self.path)
    }
}
