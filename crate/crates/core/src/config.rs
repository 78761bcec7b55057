//! Experiment configuration file (TOML).
//!
//! ```toml
//! output_dir = "runs/demo"
//!
//! [dataset]
//! source = "synthetic"          # or: source = "file", path = "data.fxd"
//! num_domains = 4
//! num_classes = 5
//! feature_dim = 16
//! samples_per_domain_class = 100
//! class_separation = 3.0
//! noise_std = 1.0
//! seed = 0
//! domain_shift = { kind = "generated", rotation_step = 0.35, offset_norm = 1.0, scale_min = 0.8, scale_max = 1.25 }
//!
//! [split]
//! n_labels = 10
//! seed = 0
//!
//! [train]
//! seed = 0
//! epochs = 20
//!
//! [method]
//! regularizer = "fixclr"        # none | fixclr | fixclr_with_positives
//! threshold = { kind = "fixed", value = 0.95 }
//! fixclr = { temperature = 0.5, loss_weight = 1.0 }
//!
//! [sweep]                       # optional, used by `fixclr sweep`
//! methods = ["none", "fixclr", "fixclr_with_positives"]
//! seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! Unknown keys are rejected everywhere. The dataset, split and train
//! seeds are required. Method keys belong in `[method]` only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_dataset, synth_generate, MultiDomainDataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::loss::FixClrConfig;
use crate::pseudo_label::ThresholdPolicy;
use crate::trainer::{Regularizer, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSection {
    Synthetic(SyntheticConfig),
    /// A dataset file; relative paths resolve against the config file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub n_labels: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub regularizer: Regularizer,
    #[serde(default)]
    pub fixclr: FixClrConfig,
    #[serde(default)]
    pub threshold: ThresholdPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub methods: Vec<Regularizer>,
    pub seeds: Vec<u64>,
    /// Target domains; all domains when absent.
    #[serde(default)]
    pub targets: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub split: SplitSection,
    /// Everything except the method keys, which are taken from `method`.
    pub train: TrainConfig,
    pub method: MethodSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Equality of the experiment settings; where the file was loaded from
/// does not matter.
impl PartialEq for ExperimentConfig {
    fn eq(&self, other: &Self) -> bool {
        self.output_dir == other.output_dir
            && self.dataset == other.dataset
            && self.split == other.split
            && self.train == other.train
            && self.method == other.method
            && self.sweep == other.sweep
    }
}

const METHOD_KEYS: [&str; 3] = ["regularizer", "fixclr", "threshold"];

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.base_dir = parent.canonicalize().map_err(|e| Error::io(parent, e))?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(train) = value.get("train").and_then(toml::Value::as_table) {
            if let Some(k) = METHOD_KEYS.iter().find(|k| train.contains_key(**k)) {
                return Err(Error::Config(format!("key `train.{k}` belongs in [method]")));
            }
            if !train.contains_key("seed") {
                return Err(Error::Config("missing field `seed` in [train]".into()));
            }
        }
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sync_method();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        let mut copy = self.clone();
        // Method keys live in [method]; keep them out of [train].
        copy.train.regularizer = Regularizer::default();
        copy.train.fixclr = FixClrConfig::default();
        copy.train.threshold = ThresholdPolicy::default();
        let mut table = toml::Table::try_from(&copy).expect("config serializes");
        if let Some(train) = table.get_mut("train").and_then(toml::Value::as_table_mut) {
            METHOD_KEYS.iter().for_each(|k| {
                train.remove(*k);
            });
        }
        toml::to_string(&table).expect("config serializes")
    }

    fn sync_method(&mut self) {
        self.train.regularizer = self.method.regularizer;
        self.train.fixclr = self.method.fixclr;
        self.train.threshold = self.method.threshold.clone();
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetSection::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        if self.split.n_labels == 0 {
            return Err(Error::Config("split.n_labels must be >= 1".into()));
        }
        if let Some(s) = &self.sweep {
            if s.methods.is_empty() || s.seeds.is_empty() {
                return Err(Error::Config("sweep.methods and sweep.seeds must be non-empty".into()));
            }
        }
        self.train.validate()
    }

    /// Training settings with the method section applied.
    pub fn train_config(&self) -> TrainConfig {
        self.train.clone()
    }

    pub fn set_method(&mut self, regularizer: Regularizer) {
        self.method.regularizer = regularizer;
        self.sync_method();
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.split.seed = seed;
    }

    pub fn set_base_dir(&mut self, dir: PathBuf) {
        self.base_dir = dir;
    }

    /// A copy whose dataset path no longer depends on where the config
    /// file lives.
    pub fn resolved(&self) -> Self {
        let mut copy = self.clone();
        if let Some(p) = self.dataset_path() {
            copy.dataset = DatasetSection::File { path: p };
        }
        copy
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        match &self.dataset {
            DatasetSection::File { path } => Some(self.base_dir.join(path)),
            DatasetSection::Synthetic(_) => None,
        }
    }

    pub fn load_dataset(&self) -> Result<MultiDomainDataset> {
        match &self.dataset {
            DatasetSection::Synthetic(s) => synth_generate(s),
            DatasetSection::File { .. } => read_dataset(&self.dataset_path().expect("file source")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
output_dir = "out"

[dataset]
source = "synthetic"
num_domains = 3
num_classes = 2
feature_dim = 4
samples_per_domain_class = 10
class_separation = 3.0
noise_std = 0.5
seed = 1
domain_shift = { kind = "generated", rotation_step = 0.3, offset_norm = 1.0, scale_min = 1.0, scale_max = 1.0 }

[split]
n_labels = 2
seed = 4

[train]
seed = 4
epochs = 2

[method]
regularizer = "fixclr_with_positives"
threshold = { kind = "fixed", value = 0.9 }
"#;

    #[test]
    fn parses_and_applies_method() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        let t = cfg.train_config();
        assert_eq!(t.regularizer, Regularizer::FixclrWithPositives);
        assert_eq!(t.threshold, ThresholdPolicy::Fixed { value: 0.9 });
        assert_eq!(t.epochs, 2);
        assert_eq!(cfg.load_dataset().unwrap().len(), 60);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for (from, to) in [("epochs = 2", "epochs = 2\nepoch = 3"), ("n_labels = 2", "n_labels = 2\nbudget = 1"), ("noise_std = 0.5", "noise_std = 0.5\nnoize = 1")] {
            let err = ExperimentConfig::from_toml(&BASE.replace(from, to)).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{err}");
        }
        let err = ExperimentConfig::from_toml(&format!("{BASE}\nextra = 1\n")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn missing_keys_are_named() {
        let err = ExperimentConfig::from_toml(&BASE.replace("n_labels = 2\n", "")).unwrap_err();
        assert!(err.to_string().contains("n_labels"), "{err}");
        let err = ExperimentConfig::from_toml(&BASE.replace("seed = 4\nepochs", "epochs")).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        let err = ExperimentConfig::from_toml(&BASE.replace("seed = 1\n", "")).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn method_keys_outside_method_are_rejected() {
        let err = ExperimentConfig::from_toml(&BASE.replace("epochs = 2", "epochs = 2\nregularizer = \"none\"")).unwrap_err();
        assert!(err.to_string().contains("train.regularizer"), "{err}");
    }

    #[test]
    fn file_source_resolves_relative_to_config() {
        let text = BASE.replace("source = \"synthetic\"", "source = \"file\"\npath = \"d.txt\"");
        let text = text.split("\n[split]").next().unwrap().lines().filter(|l| {
            !["num_", "feature", "samples", "class_", "noise", "seed", "domain_shift"].iter().any(|p| l.starts_with(p))
        }).collect::<Vec<_>>().join("\n")
            + "\n[split]" + BASE.split("\n[split]").nth(1).unwrap();
        let mut cfg = ExperimentConfig::from_toml(&text).unwrap();
        cfg.set_base_dir(PathBuf::from("/tmp/x"));
        assert_eq!(cfg.dataset_path().unwrap(), PathBuf::from("/tmp/x/d.txt"));
    }
}
