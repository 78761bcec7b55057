//! Weak/strong view generation for the consistency objective.
//!
//! Synthetic vectors: the weak view adds isotropic Gaussian noise; the strong
//! view adds larger noise and then zeroes `floor(mask_fraction * F)`
//! uniformly chosen coordinates.
//!
//! Images (CHW, `f64` pixels): the weak view is a random horizontal flip
//! plus a random translation of up to `max_shift` pixels with zero padding
//! (crop-and-flip). The strong view applies the weak view, then brightness
//! and contrast jitter and a square cutout.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Weak,
    Strong,
}

/// Synthetic-mode magnitudes, shared by the weak and strong policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub noise_std_weak: f64,
    pub noise_std_strong: f64,
    pub mask_fraction_strong: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { noise_std_weak: 0.2, noise_std_strong: 0.6, mask_fraction_strong: 0.25 }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std_weak >= 0.0 && self.noise_std_strong >= self.noise_std_weak && self.noise_std_strong.is_finite())
        {
            return Err(Error::Config(format!(
                "augmentation needs noise_std_strong >= noise_std_weak >= 0 (got {} and {})",
                self.noise_std_strong, self.noise_std_weak
            )));
        }
        if !(0.0..1.0).contains(&self.mask_fraction_strong) {
            return Err(Error::Config(format!(
                "mask_fraction_strong must be in [0, 1), got {}",
                self.mask_fraction_strong
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationPolicy {
    pub kind: AugmentKind,
    pub params: AugmentParams,
}

impl AugmentationPolicy {
    pub fn weak(params: AugmentParams) -> Self {
        Self { kind: AugmentKind::Weak, params }
    }

    pub fn strong(params: AugmentParams) -> Self {
        Self { kind: AugmentKind::Strong, params }
    }

    pub fn apply(&self, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        match self.kind {
            AugmentKind::Weak => weak_augment(x, self, rng),
            AugmentKind::Strong => strong_augment(x, self, rng),
        }
    }
}

fn add_noise(x: &[f64], std: f64, rng: &mut Rng) -> Vec<f64> {
    if std == 0.0 {
        return x.to_vec();
    }
    let normal = Normal::new(0.0, std).expect("validated std");
    x.iter().map(|v| v + normal.sample(rng)).collect()
}

pub fn weak_augment(x: &[f64], policy: &AugmentationPolicy, rng: &mut Rng) -> Result<Vec<f64>> {
    if policy.kind != AugmentKind::Weak {
        return Err(Error::Config("weak_augment called with a strong policy".into()));
    }
    policy.params.validate()?;
    Ok(add_noise(x, policy.params.noise_std_weak, rng))
}

pub fn strong_augment(x: &[f64], policy: &AugmentationPolicy, rng: &mut Rng) -> Result<Vec<f64>> {
    if policy.kind != AugmentKind::Strong {
        return Err(Error::Config("strong_augment called with a weak policy".into()));
    }
    policy.params.validate()?;
    let mut out = add_noise(x, policy.params.noise_std_strong, rng);
    let masked = (policy.params.mask_fraction_strong * x.len() as f64).floor() as usize;
    if masked > 0 {
        for k in index::sample(rng, x.len(), masked) {
            out[k] = 0.0;
        }
    }
    Ok(out)
}

/// A CHW image with `f64` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Data(format!(
                "image buffer has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn mse(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / self.data.len() as f64
    }
}

/// Image-mode magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageAugmentParams {
    /// Largest translation, in pixels, for crop-and-flip.
    pub max_shift: usize,
    /// Brightness offsets are uniform in `[-brightness, brightness]`.
    pub brightness: f64,
    /// Contrast factors are uniform in `[1 - contrast, 1 + contrast]`.
    pub contrast: f64,
    /// Cutout side as a fraction of the shorter image side.
    pub cutout_fraction: f64,
}

impl Default for ImageAugmentParams {
    fn default() -> Self {
        Self { max_shift: 4, brightness: 0.3, contrast: 0.3, cutout_fraction: 0.5 }
    }
}

pub fn weak_augment_image(img: &Image, p: &ImageAugmentParams, rng: &mut Rng) -> Image {
    let flip = rng.random_bool(0.5);
    let s = p.max_shift as i64;
    let dy = rng.random_range(-s..=s);
    let dx = rng.random_range(-s..=s);
    let mut out = vec![0.0; img.data.len()];
    for c in 0..img.channels {
        for y in 0..img.height {
            for x in 0..img.width {
                let sy = y as i64 + dy;
                let mut sx = x as i64 + dx;
                if sy < 0 || sx < 0 || sy >= img.height as i64 || sx >= img.width as i64 {
                    continue;
                }
                if flip {
                    sx = img.width as i64 - 1 - sx;
                }
                out[(c * img.height + y) * img.width + x] = img.at(c, sy as usize, sx as usize);
            }
        }
    }
    Image { data: out, ..*img }
}

pub fn strong_augment_image(img: &Image, p: &ImageAugmentParams, rng: &mut Rng) -> Image {
    let mut out = weak_augment_image(img, p, rng);
    let b = if p.brightness > 0.0 { rng.random_range(-p.brightness..=p.brightness) } else { 0.0 };
    let k = if p.contrast > 0.0 { rng.random_range(1.0 - p.contrast..=1.0 + p.contrast) } else { 1.0 };
    let mean = out.data.iter().sum::<f64>() / out.data.len() as f64;
    for v in &mut out.data {
        *v = (*v - mean) * k + mean + b;
    }
    let side = (p.cutout_fraction * img.height.min(img.width) as f64).round() as usize;
    if side > 0 {
        let y0 = rng.random_range(0..=img.height - side);
        let x0 = rng.random_range(0..=img.width - side);
        for c in 0..img.channels {
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    out.data[(c * img.height + y) * img.width + x] = 0.0;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn params(w: f64, s: f64, m: f64) -> AugmentParams {
        AugmentParams { noise_std_weak: w, noise_std_strong: s, mask_fraction_strong: m }
    }

    #[test]
    fn zero_noise_weak_is_identity() {
        let x = vec![1.0, -2.0, 3.5];
        let y = weak_augment(&x, &AugmentationPolicy::weak(params(0.0, 0.0, 0.0)), &mut rng::stream(0, 0)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn zero_noise_zero_mask_strong_is_identity() {
        let x = vec![1.0, -2.0, 3.5, 0.25];
        let y = strong_augment(&x, &AugmentationPolicy::strong(params(0.0, 0.0, 0.0)), &mut rng::stream(0, 0)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn seeded_views_repeat() {
        let x = vec![0.5; 8];
        let pol = AugmentationPolicy::weak(params(0.3, 0.5, 0.25));
        let a = weak_augment(&x, &pol, &mut rng::stream(4, 1)).unwrap();
        let b = weak_augment(&x, &pol, &mut rng::stream(4, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quarter_mask_zeroes_two_of_eight() {
        let x: Vec<f64> = (1..=8).map(f64::from).collect();
        let pol = AugmentationPolicy::strong(params(0.0, 0.0, 0.25));
        let mut r = rng::stream(1, 1);
        for _ in 0..50 {
            let y = strong_augment(&x, &pol, &mut r).unwrap();
            assert_eq!(y.iter().filter(|v| **v == 0.0).count(), 2);
        }
    }

    fn empirical_std(pol: AugmentationPolicy, x: &[f64], draws: usize) -> f64 {
        let mut r = rng::stream(77, 3);
        let mut acc = 0.0;
        let mut n = 0usize;
        for _ in 0..draws {
            let y = pol.apply(x, &mut r).unwrap();
            for (a, b) in y.iter().zip(x) {
                if *a != 0.0 {
                    acc += (a - b).powi(2);
                    n += 1;
                }
            }
        }
        (acc / n as f64).sqrt()
    }

    #[test]
    fn weak_noise_std_matches_monte_carlo() {
        let x = vec![1.0; 8];
        let s = empirical_std(AugmentationPolicy::weak(params(0.1, 0.1, 0.0)), &x, 10_000);
        assert!((s - 0.1).abs() < 0.005, "{s}");
    }

    #[test]
    fn strong_noise_std_matches_monte_carlo() {
        // Masked coordinates are exactly zero and excluded from the estimate.
        let x = vec![1.0; 8];
        let s = empirical_std(AugmentationPolicy::strong(params(0.1, 0.3, 0.25)), &x, 10_000);
        assert!((s - 0.3).abs() < 0.015, "{s}");
    }

    #[test]
    fn mismatched_kind_is_rejected() {
        let p = params(0.1, 0.2, 0.1);
        assert!(weak_augment(&[1.0], &AugmentationPolicy::strong(p), &mut rng::stream(0, 0)).is_err());
        assert!(strong_augment(&[1.0], &AugmentationPolicy::weak(p), &mut rng::stream(0, 0)).is_err());
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(params(0.5, 0.1, 0.0).validate().is_err());
        assert!(params(0.1, 0.5, 1.0).validate().is_err());
        assert!(params(-0.1, 0.5, 0.0).validate().is_err());
    }

    fn mean_sq_perturbation(pol: AugmentationPolicy, x: &[f64]) -> f64 {
        let mut r = rng::stream(5, 5);
        let draws = 4000;
        (0..draws)
            .map(|_| pol.apply(x, &mut r).unwrap().iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / draws as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn shapes_preserved(x in prop::collection::vec(-5.0f64..5.0, 1..20), seed in any::<u64>()) {
            let p = params(0.2, 0.5, 0.3);
            let mut r = rng::stream(seed, 0);
            prop_assert_eq!(weak_augment(&x, &AugmentationPolicy::weak(p), &mut r).unwrap().len(), x.len());
            prop_assert_eq!(strong_augment(&x, &AugmentationPolicy::strong(p), &mut r).unwrap().len(), x.len());
        }

        // Zeroing replaces a coordinate's noise with the coordinate itself, so
        // dominance needs (F - m) s^2 + (m / F) |x|^2 >= F w^2. Inputs here
        // keep every coordinate at least as large as the weak noise.
        #[test]
        fn strong_dominates_weak(
            w in 0.0f64..0.5,
            extra in 0.0f64..0.5,
            m in 0.0f64..0.9,
            x in prop::collection::vec(prop_oneof![0.5f64..3.0, -3.0f64..-0.5], 4..12),
        ) {
            let p = params(w, w + extra, m);
            let weak = mean_sq_perturbation(AugmentationPolicy::weak(p), &x);
            let strong = mean_sq_perturbation(AugmentationPolicy::strong(p), &x);
            // Monte-Carlo slack of a few standard errors.
            let slack = 0.1 * weak + 1e-9;
            prop_assert!(strong + slack >= weak, "strong {} weak {}", strong, weak);
        }
    }

    #[test]
    fn image_views_preserve_shape_and_strong_dominates() {
        let (c, h, w) = (3, 16, 16);
        let mut r = rng::stream(9, 9);
        let data: Vec<f64> = (0..c * h * w).map(|_| r.random_range(0.0..1.0)).collect();
        let img = Image::new(c, h, w, data).unwrap();
        let p = ImageAugmentParams::default();
        let (mut weak, mut strong) = (0.0, 0.0);
        for _ in 0..500 {
            let a = weak_augment_image(&img, &p, &mut r);
            let b = strong_augment_image(&img, &p, &mut r);
            assert_eq!(a.data.len(), img.data.len());
            assert_eq!(b.data.len(), img.data.len());
            weak += img.mse(&a);
            strong += img.mse(&b);
        }
        assert!(strong > weak, "strong {strong} weak {weak}");
    }

    #[test]
    fn image_buffer_size_checked() {
        assert!(Image::new(1, 2, 2, vec![0.0; 3]).is_err());
    }
}
