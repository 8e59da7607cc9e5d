//! Diagonal Gaussian action distributions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const STD_MIN: f64 = 1e-3;
pub const STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicyOutput {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Clamp a stddev into the global bounds; `true` when the bound was active.
#[inline]
pub fn clamp_std(s: f64) -> (f64, bool) {
    if s < STD_MIN {
        (STD_MIN, true)
    } else if s > STD_MAX {
        (STD_MAX, true)
    } else {
        (s, false)
    }
}

impl GaussianPolicyOutput {
    /// Builds a distribution, clamping each stddev into `[STD_MIN, STD_MAX]`.
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), std.len(), "mean/std length mismatch");
        let std = std.into_iter().map(|s| clamp_std(s).0).collect();
        GaussianPolicyOutput { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        gaussian_log_prob(self, action)
    }

    /// Closed-form differential entropy.
    pub fn entropy(&self) -> f64 {
        self.std.iter().map(|s| 0.5 + HALF_LN_2PI + s.ln()).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect()
    }
}

pub fn gaussian_log_prob(dist: &GaussianPolicyOutput, action: &[f64]) -> f64 {
    assert_eq!(action.len(), dist.mean.len(), "action length mismatch");
    dist.mean
        .iter()
        .zip(&dist.std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s;
            -0.5 * z * z - s.ln() - HALF_LN_2PI
        })
        .sum()
}

/// Derivatives of `log_prob(action)` with respect to mean and stddev.
pub fn log_prob_grad(dist: &GaussianPolicyOutput, action: &[f64], d_mean: &mut [f64], d_std: &mut [f64]) {
    for d in 0..dist.dim() {
        let s = dist.std[d];
        let diff = action[d] - dist.mean[d];
        d_mean[d] = diff / (s * s);
        d_std[d] = diff * diff / (s * s * s) - 1.0 / s;
    }
}

/// Plain additive residual combination (base + residual).
pub fn simple_residual_sum(base_mean: &[f64], residual_mean: &[f64]) -> Vec<f64> {
    assert_eq!(base_mean.len(), residual_mean.len());
    base_mean.iter().zip(residual_mean).map(|(a, b)| a + b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_normal_at_mean() {
        let d = GaussianPolicyOutput::new(vec![0.0], vec![1.0]);
        assert!((d.log_prob(&[0.0]) - (-0.918_938_5)).abs() < 1e-7);
    }

    #[test]
    fn factorizes_over_dims() {
        let a = GaussianPolicyOutput::new(vec![0.3], vec![0.5]);
        let b = GaussianPolicyOutput::new(vec![-1.0], vec![1.7]);
        let ab = GaussianPolicyOutput::new(vec![0.3, -1.0], vec![0.5, 1.7]);
        let x = [0.1, 0.4];
        let sum = a.log_prob(&x[..1]) + b.log_prob(&x[1..]);
        assert!((ab.log_prob(&x) - sum).abs() < 1e-14);
    }

    #[test]
    fn stddev_is_clamped() {
        let d = GaussianPolicyOutput::new(vec![0.0, 0.0], vec![1e-9, 50.0]);
        assert_eq!(d.std, vec![STD_MIN, STD_MAX]);
    }

    #[test]
    fn residual_sum_examples() {
        assert_eq!(simple_residual_sum(&[0.1, -0.2], &[0.0, 0.0]), vec![0.1, -0.2]);
        assert_eq!(simple_residual_sum(&[0.0, 0.0], &[0.3, 0.4]), vec![0.3, 0.4]);
        let s = simple_residual_sum(&[0.1, -0.2], &[0.05, 0.05]);
        assert!((s[0] - 0.15).abs() < 1e-15 && (s[1] + 0.15).abs() < 1e-15);
    }

    #[test]
    fn log_prob_grad_matches_finite_difference() {
        let d = GaussianPolicyOutput::new(vec![0.2, -0.4], vec![0.7, 1.3]);
        let a = [0.9, -1.5];
        let mut gm = [0.0; 2];
        let mut gs = [0.0; 2];
        log_prob_grad(&d, &a, &mut gm, &mut gs);
        let h = 1e-6;
        for k in 0..2 {
            let mut up = d.clone();
            up.mean[k] += h;
            let mut dn = d.clone();
            dn.mean[k] -= h;
            let fd = (up.log_prob(&a) - dn.log_prob(&a)) / (2.0 * h);
            assert!((fd - gm[k]).abs() < 1e-7);
            let mut up = d.clone();
            up.std[k] += h;
            let mut dn = d.clone();
            dn.std[k] -= h;
            let fd = (up.log_prob(&a) - dn.log_prob(&a)) / (2.0 * h);
            assert!((fd - gs[k]).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn symmetric_about_mean(m in -2.0f64..2.0, s in 0.01f64..2.0, delta in -3.0f64..3.0) {
            let d = GaussianPolicyOutput::new(vec![m], vec![s]);
            let lp = d.log_prob(&[m + delta]);
            let lm = d.log_prob(&[m - delta]);
            prop_assert!((lp - lm).abs() <= 1e-12 * lp.abs().max(1.0));
        }
    }
}
