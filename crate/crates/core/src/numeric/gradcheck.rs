//! Central finite-difference verification of [`Mlp::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::mlp::{ForwardCache, Mlp, NetworkSpec};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error with a floor on the denominator so tiny gradients compare
/// on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

pub fn gradient_check(spec: &NetworkSpec, seed: u64, tolerance: f64) -> GradCheckReport {
    gradient_check_with(spec, seed, tolerance, |_| {})
}

/// Like [`gradient_check`], but `mutate` may alter the analytic gradient
/// before comparison (used to confirm the checker catches bad gradients).
pub fn gradient_check_with(
    spec: &NetworkSpec,
    seed: u64,
    tolerance: f64,
    mutate: impl Fn(&mut [f64]),
) -> GradCheckReport {
    assert!(tolerance > 0.0, "tolerance must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mlp = Mlp::init(spec.clone(), &mut rng, 1.0).expect("valid spec");
    // Randomize biases too so every ELU branch gets exercised.
    let n = mlp.param_count();
    for p in mlp.store_mut().params_mut().iter_mut() {
        *p += rng.random_range(-0.5..0.5);
    }
    let input: Vec<f64> = (0..spec.input_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let coeffs: Vec<f64> = (0..spec.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();

    let loss = |m: &Mlp, x: &[f64]| -> f64 {
        let y = m.predict(x).expect("dims checked");
        y.iter().zip(&coeffs).map(|(a, c)| a * c).sum()
    };

    let mut cache = ForwardCache::new();
    mlp.forward(&input, &mut cache).expect("dims checked");
    let mut grad = vec![0.0; n];
    let mut grad_x = vec![0.0; spec.input_dim];
    mlp.backward(&mut cache, &coeffs, Some(&mut grad), Some(&mut grad_x))
        .expect("forward ran");
    mutate(&mut grad);

    let mut worst = (0.0f64, 0usize);
    for i in 0..n {
        let orig = mlp.store().params()[i];
        mlp.store_mut().params_mut()[i] = orig + FD_STEP;
        let up = loss(&mlp, &input);
        mlp.store_mut().params_mut()[i] = orig - FD_STEP;
        let down = loss(&mlp, &input);
        mlp.store_mut().params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(grad[i], fd);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    let mut x = input.clone();
    for i in 0..spec.input_dim {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = loss(&mlp, &x);
        x[i] = orig - FD_STEP;
        let down = loss(&mlp, &x);
        x[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(grad_x[i], fd);
        if err > worst.0 {
            worst = (err, n + i);
        }
    }

    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: n + spec.input_dim,
        tolerance,
        passed: worst.0 < tolerance,
    }
}
