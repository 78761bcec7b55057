use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{MultiDomainDataset, Provenance, Sample};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Affine map applied to a domain's samples: rotate in the configured
/// 2-plane, scale, then translate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainTransform {
    /// Rotation angle in radians.
    pub rotation: f64,
    pub scale: f64,
    pub offset: Vec<f64>,
}

impl DomainTransform {
    pub fn identity(dim: usize) -> Self {
        Self { rotation: 0.0, scale: 1.0, offset: vec![0.0; dim] }
    }

    pub fn apply(&self, plane: [usize; 2], x: &mut [f64]) {
        let (sin, cos) = self.rotation.sin_cos();
        let (a, b) = (x[plane[0]], x[plane[1]]);
        x[plane[0]] = cos * a - sin * b;
        x[plane[1]] = sin * a + cos * b;
        for (v, o) in x.iter_mut().zip(&self.offset) {
            *v = *v * self.scale + o;
        }
    }
}

/// How the per-domain transforms are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainShift {
    /// One transform per domain, listed explicitly.
    Explicit { transforms: Vec<DomainTransform> },
    /// Domain `d` is rotated by `d * rotation_step`, scaled by a value
    /// spread evenly over `[scale_min, scale_max]`, and offset along a
    /// seeded random direction with norm `offset_norm` (domain 0 included).
    Generated {
        rotation_step: f64,
        offset_norm: f64,
        scale_min: f64,
        scale_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_domains: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_domain_class: usize,
    /// Euclidean distance between any two class means.
    pub class_separation: f64,
    pub noise_std: f64,
    pub domain_shift: DomainShift,
    #[serde(default = "default_plane")]
    pub rotation_plane: [usize; 2],
    pub seed: u64,
}

fn default_plane() -> [usize; 2] {
    [0, 1]
}

impl SyntheticConfig {
    /// The benchmark used by the acceptance experiments: 4 domains,
    /// 5 classes, 16 features, 100 samples per (domain, class).
    pub fn benchmark(seed: u64) -> Self {
        Self {
            num_domains: 4,
            num_classes: 5,
            feature_dim: 16,
            samples_per_domain_class: 100,
            class_separation: 3.0,
            noise_std: 1.0,
            domain_shift: DomainShift::Generated {
                rotation_step: 0.35,
                offset_norm: 1.0,
                scale_min: 0.8,
                scale_max: 1.25,
            },
            rotation_plane: [0, 1],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_domains == 0
            || self.num_classes == 0
            || self.feature_dim == 0
            || self.samples_per_domain_class == 0
        {
            return bad("synthetic counts (num_domains, num_classes, feature_dim, samples_per_domain_class) must be positive".into());
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return bad(format!("class_separation must be > 0, got {}", self.class_separation));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        let [p, q] = self.rotation_plane;
        if p == q || p >= self.feature_dim || q >= self.feature_dim {
            return bad(format!("rotation_plane {:?} invalid for feature_dim {}", self.rotation_plane, self.feature_dim));
        }
        match &self.domain_shift {
            DomainShift::Explicit { transforms } => {
                if transforms.len() != self.num_domains {
                    return bad(format!("{} domain transforms for {} domains", transforms.len(), self.num_domains));
                }
                for (d, t) in transforms.iter().enumerate() {
                    if t.offset.len() != self.feature_dim {
                        return bad(format!("domain {d} offset has length {}, expected {}", t.offset.len(), self.feature_dim));
                    }
                    if t.scale == 0.0 || !t.scale.is_finite() || !t.rotation.is_finite() {
                        return bad(format!("domain {d} transform is not invertible"));
                    }
                }
            }
            DomainShift::Generated { rotation_step, offset_norm, scale_min, scale_max } => {
                if !(*scale_min > 0.0 && scale_max >= scale_min) {
                    return bad(format!("scale range [{scale_min}, {scale_max}] must be positive and ordered"));
                }
                if !rotation_step.is_finite() || !(*offset_norm >= 0.0) {
                    return bad("rotation_step must be finite and offset_norm >= 0".into());
                }
            }
        }
        Ok(())
    }

    /// Class means: scaled coordinate axes when `C <= F` (so every pair is
    /// exactly `class_separation` apart), otherwise seeded random directions.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let radius = self.class_separation / std::f64::consts::SQRT_2;
        if self.num_classes <= self.feature_dim {
            (0..self.num_classes)
                .map(|c| {
                    let mut m = vec![0.0; self.feature_dim];
                    m[c] = radius;
                    m
                })
                .collect()
        } else {
            let mut rng = rng::stream(self.seed, streams::SYNTH + 100);
            (0..self.num_classes).map(|_| random_direction(&mut rng, self.feature_dim, radius)).collect()
        }
    }

    /// Resolved per-domain transforms.
    pub fn transforms(&self) -> Vec<DomainTransform> {
        match &self.domain_shift {
            DomainShift::Explicit { transforms } => transforms.clone(),
            DomainShift::Generated { rotation_step, offset_norm, scale_min, scale_max } => {
                let mut rng = rng::stream(self.seed, streams::SYNTH + 200);
                (0..self.num_domains)
                    .map(|d| {
                        let frac = if self.num_domains > 1 { d as f64 / (self.num_domains - 1) as f64 } else { 0.0 };
                        DomainTransform {
                            rotation: d as f64 * rotation_step,
                            scale: scale_min + frac * (scale_max - scale_min),
                            offset: random_direction(&mut rng, self.feature_dim, *offset_norm),
                        }
                    })
                    .collect()
            }
        }
    }
}

fn random_direction(rng: &mut impl rand::Rng, dim: usize, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return v.into_iter().map(|x| x * norm / n).collect();
        }
    }
}

/// Generates `D * C * samples_per_domain_class` samples. Identical configs
/// (including the seed) produce bitwise-identical datasets.
pub fn synth_generate(config: &SyntheticConfig) -> Result<MultiDomainDataset> {
    config.validate()?;
    let means = config.class_means();
    let transforms = config.transforms();
    let mut rng = rng::stream(config.seed, streams::SYNTH);
    let n = config.num_domains * config.num_classes * config.samples_per_domain_class;
    let mut samples = Vec::with_capacity(n);
    for (d, transform) in transforms.iter().enumerate() {
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..config.samples_per_domain_class {
                let mut x: Vec<f64> = mean
                    .iter()
                    .map(|m| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + config.noise_std * z
                    })
                    .collect();
                transform.apply(config.rotation_plane, &mut x);
                samples.push(Sample { sample_id: samples.len() as u64, domain_id: d, class_id: c, features: x });
            }
        }
    }
    MultiDomainDataset::new(
        samples,
        config.num_domains,
        config.num_classes,
        config.feature_dim,
        Provenance::Synthetic { seed: config.seed, config: config.clone() },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_config(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            num_domains: 4,
            num_classes: 3,
            feature_dim: 8,
            samples_per_domain_class: 50,
            class_separation: 4.0,
            noise_std: 0.5,
            domain_shift: DomainShift::Explicit { transforms: vec![DomainTransform::identity(8); 4] },
            rotation_plane: [0, 1],
            seed,
        }
    }

    #[test]
    fn sample_count_is_product_of_counts() {
        let ds = synth_generate(&identity_config(1)).unwrap();
        assert_eq!(ds.len(), 600);
    }

    #[test]
    fn same_seed_same_features() {
        let a = synth_generate(&SyntheticConfig::benchmark(7)).unwrap();
        let b = synth_generate(&SyntheticConfig::benchmark(7)).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            let xb: Vec<u64> = x.features.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.features.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        let c = synth_generate(&SyntheticConfig::benchmark(8)).unwrap();
        assert_ne!(a.samples()[0].features, c.samples()[0].features);
    }

    #[test]
    fn identity_transforms_share_class_means() {
        let cfg = identity_config(3);
        let ds = synth_generate(&cfg).unwrap();
        let means = cfg.class_means();
        let tol = 3.0 * cfg.noise_std / (50f64).sqrt();
        for d in 0..4 {
            for (c, mean) in means.iter().enumerate() {
                let members: Vec<&Sample> = ds.samples().iter().filter(|s| s.domain_id == d && s.class_id == c).collect();
                assert_eq!(members.len(), 50);
                for k in 0..cfg.feature_dim {
                    let emp = members.iter().map(|s| s.features[k]).sum::<f64>() / 50.0;
                    assert!((emp - mean[k]).abs() < tol, "d={d} c={c} k={k}: {emp} vs {}", mean[k]);
                }
            }
        }
    }

    #[test]
    fn class_means_are_separated() {
        let cfg = SyntheticConfig::benchmark(0);
        let means = cfg.class_means();
        for a in 0..means.len() {
            for b in (a + 1)..means.len() {
                let d = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!((d - cfg.class_separation).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_counts_are_config_errors() {
        let mut cfg = identity_config(0);
        cfg.num_classes = 0;
        assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
        let mut cfg = identity_config(0);
        if let DomainShift::Explicit { transforms } = &mut cfg.domain_shift {
            transforms[2].scale = 0.0;
        }
        assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
    }
}
