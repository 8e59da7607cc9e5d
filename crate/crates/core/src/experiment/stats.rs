//! Small summary statistics and an ordered-alternative trend test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Mean and standard error of the mean (0 for fewer than two values).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    /// Count of between-group pairs ordered as the alternative predicts
    /// (ties count one half).
    pub statistic: f64,
    pub expected: f64,
    pub z: f64,
    /// One-sided p-value from the normal approximation.
    pub p_value: f64,
}

/// Jonckheere-Terpstra test against the alternative that values decrease
/// from each group to the next.
pub fn decreasing_trend(groups: &[Vec<f64>]) -> TrendTest {
    let mut stat = 0.0;
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            for &a in &groups[i] {
                for &b in &groups[j] {
                    stat += if b < a {
                        1.0
                    } else if b == a {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    let sizes: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let n: f64 = sizes.iter().sum();
    let sq: f64 = sizes.iter().map(|s| s * s).sum();
    let expected = (n * n - sq) / 4.0;
    let var = (n * n * (2.0 * n + 3.0) - sizes.iter().map(|s| s * s * (2.0 * s + 3.0)).sum::<f64>()) / 72.0;
    let z = if var > 0.0 { (stat - expected) / var.sqrt() } else { 0.0 };
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    TrendTest {
        statistic: stat,
        expected,
        z,
        p_value: 1.0 - normal.cdf(z),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stderr_of_known_sample() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, n = 4
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn perfect_ordering_of_three_groups_of_five() {
        let g = vec![vec![10.0, 11.0, 12.0, 13.0, 14.0], vec![5.0, 6.0, 7.0, 8.0, 9.0], vec![0.0, 1.0, 2.0, 3.0, 4.0]];
        let t = decreasing_trend(&g);
        assert_eq!(t.statistic, 75.0);
        assert_eq!(t.expected, 37.5);
        // variance (225 * 33 - 3 * 25 * 13) / 72
        let sd = ((225.0 * 33.0 - 975.0) / 72.0f64).sqrt();
        assert!((t.z - 37.5 / sd).abs() < 1e-12);
        assert!(t.p_value < 1e-4);
    }

    #[test]
    fn reversed_ordering_is_not_significant() {
        let g = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]];
        let t = decreasing_trend(&g);
        assert_eq!(t.statistic, 0.0);
        assert!(t.p_value > 0.95);
    }
}
