//! The ten reward terms and their weighted sum.
//!
//! Terms 1, 2, 8, 9 and 10 are rewards; terms 3 to 7 are penalties and enter
//! the total with a negative sign. Every weight in [`RewardConfig`] is
//! non-negative.

use serde::{Deserialize, Serialize};

use super::geometry::Vec2;
use crate::policy::ACTION_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub tilt: f64,
    pub actuator_accel: f64,
    pub collision: f64,
    pub action_change: f64,
    pub effort: f64,
    pub door_angle: f64,
    pub target_distance: f64,
    pub object_distance: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    /// Terminal reward on success, added outside the ten terms.
    pub success_bonus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lin_vel: 0.0,
            ang_vel: 0.0,
            tilt: 0.05,
            actuator_accel: 1e-4,
            collision: 0.2,
            action_change: 0.02,
            effort: 0.02,
            door_angle: 0.0,
            target_distance: 0.0,
            object_distance: 0.0,
            sigma1: 0.25,
            sigma2: 0.25,
            sigma3: 2.0,
            success_bonus: 0.0,
        }
    }
}

impl RewardConfig {
    pub fn weights(&self) -> [f64; 10] {
        [
            self.lin_vel,
            self.ang_vel,
            self.tilt,
            self.actuator_accel,
            self.collision,
            self.action_change,
            self.effort,
            self.door_angle,
            self.target_distance,
            self.object_distance,
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0 && self.sigma3 > 0.0) {
            return Err("reward sigmas must be positive".into());
        }
        if self.weights().iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.success_bonus < 0.0 {
            return Err("reward weights must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Largest per-step value the positive terms can reach.
    pub fn max_step_reward(&self) -> f64 {
        let q_max = std::f64::consts::FRAC_PI_2;
        self.lin_vel + self.ang_vel + self.door_angle * q_max + self.target_distance + self.object_distance
    }
}

/// Everything the reward terms read for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardInputs {
    /// Body-frame linear velocity and its target.
    pub v: Vec2,
    pub v_target: Vec2,
    /// Roll rate, pitch rate, yaw rate.
    pub omega: [f64; 3],
    pub omega_z_target: f64,
    pub action: [f64; ACTION_DIM],
    pub prev_action: [f64; ACTION_DIM],
    pub actuator_vel: [f64; ACTION_DIM],
    pub prev_actuator_vel: [f64; ACTION_DIM],
    pub tau: [f64; ACTION_DIM],
    pub n_contact: u32,
    pub q_door: Option<f64>,
    /// Target relative to the robot (robot frame).
    pub x_target: Option<Vec2>,
    /// Target relative to the pushed object.
    pub x_t2o: Option<Vec2>,
    pub dt: f64,
}

impl RewardInputs {
    /// Inputs of a robot at rest with every target met.
    pub fn at_rest(dt: f64) -> Self {
        RewardInputs {
            v: Vec2::ZERO,
            v_target: Vec2::ZERO,
            omega: [0.0; 3],
            omega_z_target: 0.0,
            action: [0.0; ACTION_DIM],
            prev_action: [0.0; ACTION_DIM],
            actuator_vel: [0.0; ACTION_DIM],
            prev_actuator_vel: [0.0; ACTION_DIM],
            tau: [0.0; ACTION_DIM],
            n_contact: 0,
            q_door: None,
            x_target: None,
            x_t2o: None,
            dt,
        }
    }
}

/// Unweighted term values (penalties positive) and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub terms: [f64; 10],
    pub bonus: f64,
    pub total: f64,
}

pub const TERM_NAMES: [&str; 10] = [
    "lin_vel",
    "ang_vel",
    "tilt",
    "actuator_accel",
    "collision",
    "action_change",
    "effort",
    "door_angle",
    "target_distance",
    "object_distance",
];

const SIGNS: [f64; 10] = [1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0];

pub fn compute_reward(inputs: &RewardInputs, cfg: &RewardConfig) -> RewardBreakdown {
    let dv = inputs.v_target - inputs.v;
    let dw = inputs.omega_z_target - inputs.omega[2];
    let sq_sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let accel: f64 = inputs
        .actuator_vel
        .iter()
        .zip(&inputs.prev_actuator_vel)
        .map(|(a, b)| ((a - b) / inputs.dt).powi(2))
        .sum();
    let terms = [
        (-dv.norm_sq() / cfg.sigma1).exp(),
        (-dw * dw / cfg.sigma2).exp(),
        inputs.omega[0].powi(2) + inputs.omega[1].powi(2),
        accel,
        inputs.n_contact as f64,
        sq_sum(&inputs.action, &inputs.prev_action),
        inputs.tau.iter().map(|t| t * t).sum(),
        inputs.q_door.unwrap_or(0.0),
        inputs.x_target.map_or(0.0, |x| (-x.norm() / cfg.sigma3).exp()),
        inputs.x_t2o.map_or(0.0, |x| (-x.norm() / cfg.sigma3).exp()),
    ];
    let total = terms
        .iter()
        .zip(cfg.weights())
        .zip(SIGNS)
        .map(|((t, w), s)| s * w * t)
        .sum();
    RewardBreakdown {
        terms,
        bonus: 0.0,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E_INV: f64 = 0.367_879_441_171_442_3;

    #[test]
    fn velocity_tracking_terms() {
        let cfg = RewardConfig::default();
        let mut inp = RewardInputs::at_rest(0.05);
        inp.v = Vec2::new(0.3, 0.0);
        inp.v_target = Vec2::new(0.3, 0.0);
        assert_eq!(compute_reward(&inp, &cfg).terms[0], 1.0);
        inp.v = Vec2::new(0.3, 0.5);
        assert!((compute_reward(&inp, &cfg).terms[0] - E_INV).abs() < 1e-12);
    }

    #[test]
    fn target_distance_term() {
        let mut inp = RewardInputs::at_rest(0.05);
        inp.x_target = Some(Vec2::new(0.0, 2.0));
        let b = compute_reward(&inp, &RewardConfig::default());
        assert!((b.terms[8] - E_INV).abs() < 1e-12);
    }

    #[test]
    fn collision_count_is_raw_penalty() {
        let mut inp = RewardInputs::at_rest(0.05);
        inp.n_contact = 3;
        let cfg = RewardConfig {
            collision: 0.5,
            ..RewardConfig::default()
        };
        let b = compute_reward(&inp, &cfg);
        assert_eq!(b.terms[4], 3.0);
        assert!((b.total + 1.5).abs() < 1e-12);
    }

    #[test]
    fn total_is_signed_weighted_sum() {
        let mut inp = RewardInputs::at_rest(0.05);
        inp.action = [0.5, 0.0, 0.0, 0.0];
        inp.tau = [0.2, 0.1, 0.0, 0.0];
        inp.q_door = Some(0.4);
        let cfg = RewardConfig {
            lin_vel: 1.0,
            door_angle: 2.0,
            ..RewardConfig::default()
        };
        let b = compute_reward(&inp, &cfg);
        let want = 1.0 - 0.02 * 0.25 - 0.02 * 0.05 + 2.0 * 0.4 + 0.0;
        // ang_vel weight is zero; terms[1] is 1 but does not count.
        assert!((b.total - want).abs() < 1e-12);
    }
}
