use crate::error::{Error, Result};

/// `base_lr * 0.5 * (1 + cos(pi * step / total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::Domain(format!("step {step} outside [0, {total_steps}]")));
    }
    if step == total_steps {
        return Ok(0.0);
    }
    let progress = step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 580, 0.003).unwrap(), 0.003);
        assert_eq!(cosine_lr(580, 580, 0.003).unwrap(), 0.0);
        assert!((cosine_lr(290, 580, 0.003).unwrap() - 0.0015).abs() < 1e-15);
    }

    #[test]
    fn non_increasing() {
        let total = 137;
        let lrs: Vec<f64> = (0..=total).map(|s| cosine_lr(s, total, 0.003).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn out_of_range() {
        assert!(cosine_lr(11, 10, 0.1).is_err());
        assert!(cosine_lr(0, 0, 0.1).is_err());
    }
}
