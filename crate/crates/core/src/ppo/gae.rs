//! Generalized advantage estimation and advantage normalization.

use crate::error::{Error, Result};

/// GAE over one trajectory. `values` carries one extra bootstrap entry;
/// `dones[t]` cuts bootstrapping from step `t` into `t + 1`.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let t_len = rewards.len();
    if values.len() != t_len + 1 || dones.len() != t_len {
        return Err(Error::Contract(format!(
            "gae lengths: {} rewards, {} values (need one more), {} dones",
            t_len,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; t_len];
    let mut last = 0.0;
    for t in (0..t_len).rev() {
        let keep = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * keep - values[t];
        last = delta + gamma * lambda * keep * last;
        adv[t] = last;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales `adv` to zero mean and unit (population) variance.
/// A constant vector is only centered.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-12 {
            *a /= std;
        }
    }
    // Remove the residual mean left by rounding.
    let m2 = adv.iter().sum::<f64>() / n;
    adv.iter_mut().for_each(|a| *a -= m2);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[1.0], &[0.0, 0.0], &[true], 0.99, 0.95).unwrap();
        assert_eq!(a, [1.0]);
        assert_eq!(r, [1.0]);
    }

    #[test]
    fn two_steps_by_hand() {
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0, 0.0], &[false, true], 0.9, 0.95).unwrap();
        assert!((a[1] - 1.0).abs() < 1e-15);
        assert!((a[0] - 1.855).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_is_td_residual() {
        let r = [0.5, -0.2, 1.0, 0.3];
        let v = [0.1, 0.4, -0.3, 0.2, 0.7];
        let d = [false, true, false, false];
        let g = 0.97;
        let (a, _) = compute_gae(&r, &v, &d, g, 0.0).unwrap();
        for t in 0..4 {
            let keep = if d[t] { 0.0 } else { 1.0 };
            assert!((a[t] - (r[t] + g * v[t + 1] * keep - v[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(compute_gae(&[1.0], &[0.0], &[true], 0.9, 0.9).is_err());
    }

    #[test]
    fn normalized_moments() {
        let mut a: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.3 - 7.0).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
