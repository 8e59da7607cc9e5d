//! Multiplicative composition of Gaussian primitives.
//!
//! The weighted product `prod_i N(mu_i, sigma_i^2)^{w_i}`, once normalized, is
//! again Gaussian per dimension with precision `p = sum_i w_i / sigma_i^2` and
//! mean `sum_i (w_i / sigma_i^2) mu_i / p`. The normalizer is never formed.

use serde::{Deserialize, Serialize};

use super::gaussian::{clamp_std, GaussianPolicyOutput};
use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Mlp};

/// Lower bound applied to every squashed weight.
pub const WEIGHT_FLOOR: f64 = 1e-4;

/// Per-source weights: parents in declaration order, residual last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionWeights {
    pub values: Vec<f64>,
}

impl CompositionWeights {
    pub fn residual(&self) -> f64 {
        *self.values.last().expect("at least one weight")
    }

    pub fn parents(&self) -> &[f64] {
        &self.values[..self.values.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Elementwise sigmoid, floored at [`WEIGHT_FLOOR`].
pub fn squash_weights(raw: &[f64]) -> CompositionWeights {
    CompositionWeights {
        values: raw.iter().map(|&r| sigmoid(r).max(WEIGHT_FLOOR)).collect(),
    }
}

/// d weight / d raw for [`squash_weights`]; zero where the floor is active.
#[inline]
pub fn squash_weight_grad(raw: f64) -> f64 {
    let s = sigmoid(raw);
    if s < WEIGHT_FLOOR {
        0.0
    } else {
        s * (1.0 - s)
    }
}

pub fn compose_mcp(primitives: &[&GaussianPolicyOutput], weights: &[f64]) -> GaussianPolicyOutput {
    assert!(!primitives.is_empty(), "composition needs at least one primitive");
    assert_eq!(primitives.len(), weights.len(), "weight arity mismatch");
    let dim = primitives[0].dim();
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for d in 0..dim {
        let mut precision = 0.0;
        let mut weighted = 0.0;
        for (p, &w) in primitives.iter().zip(weights) {
            debug_assert_eq!(p.dim(), dim);
            let q = w / (p.std[d] * p.std[d]);
            precision += q;
            weighted += q * p.mean[d];
        }
        mean[d] = weighted / precision;
        std[d] = clamp_std(precision.powf(-0.5)).0;
    }
    GaussianPolicyOutput { mean, std }
}

/// Gradients of a loss with respect to every composition input.
#[derive(Debug, Clone, Default)]
pub struct ComposeGrads {
    pub d_mean: Vec<Vec<f64>>,
    pub d_std: Vec<Vec<f64>>,
    pub d_weight: Vec<f64>,
}

impl ComposeGrads {
    pub fn resize(&mut self, n: usize, dim: usize) {
        self.d_mean.resize_with(n, Vec::new);
        self.d_std.resize_with(n, Vec::new);
        for v in self.d_mean.iter_mut().chain(self.d_std.iter_mut()) {
            v.clear();
            v.resize(dim, 0.0);
        }
        self.d_weight.clear();
        self.d_weight.resize(n, 0.0);
    }
}

/// Backward pass of [`compose_mcp`] given dL/d(mean) and dL/d(std) of the
/// composite. The composite stddev clamp blocks gradient where active.
pub fn compose_mcp_backward(
    primitives: &[&GaussianPolicyOutput],
    weights: &[f64],
    composite: &GaussianPolicyOutput,
    d_out_mean: &[f64],
    d_out_std: &[f64],
    grads: &mut ComposeGrads,
) {
    let n = primitives.len();
    let dim = composite.dim();
    grads.resize(n, dim);
    for d in 0..dim {
        let precision: f64 = primitives
            .iter()
            .zip(weights)
            .map(|(p, &w)| w / (p.std[d] * p.std[d]))
            .sum();
        let raw_std = precision.powf(-0.5);
        let d_precision = if clamp_std(raw_std).1 {
            0.0
        } else {
            d_out_std[d] * (-0.5) * raw_std / precision
        };
        let mu = composite.mean[d];
        for (i, (p, &w)) in primitives.iter().zip(weights).enumerate() {
            let s = p.std[d];
            let inv_var = 1.0 / (s * s);
            let q = w * inv_var;
            grads.d_mean[i][d] = d_out_mean[d] * q / precision;
            let d_q = d_out_mean[d] * (p.mean[d] - mu) / precision + d_precision;
            grads.d_weight[i] += d_q * inv_var;
            grads.d_std[i][d] = d_q * (-2.0 * w * inv_var / s);
        }
    }
}

/// Maps raw goal-network outputs into `[-range, range]` with tanh.
pub fn bound_goal(raw: &[f64], range: f64, out: &mut [f64]) {
    for (o, &r) in out.iter_mut().zip(raw) {
        *o = range * r.tanh();
    }
}

/// One goal vector per parent; goal-free parents get an empty vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGoalSet {
    pub goals: Vec<Vec<f64>>,
}

/// Runs a goal-synthesis network on `obs` and splits its output into one
/// bounded goal per parent. `parents` lists `(goal_dim, range)` in order.
pub fn synthesize_goals(net: &Mlp, obs: &[f64], parents: &[(usize, f64)]) -> Result<SyntheticGoalSet> {
    let total: usize = parents.iter().map(|p| p.0).sum();
    if net.output_dim() != total {
        return Err(Error::Dimension {
            context: "goal network output",
            expected: total,
            got: net.output_dim(),
        });
    }
    let raw = net.predict(obs)?;
    let mut offset = 0;
    let goals = parents
        .iter()
        .map(|&(dim, range)| {
            let mut g = vec![0.0; dim];
            bound_goal(&raw[offset..offset + dim], range, &mut g);
            offset += dim;
            g
        })
        .collect();
    Ok(SyntheticGoalSet { goals })
}
