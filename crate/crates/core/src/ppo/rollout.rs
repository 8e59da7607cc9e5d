//! Rollout collection into a flat, time-major batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gae::{compute_gae, normalize_advantages};
use crate::env::{SceneConfig, TaskKind, VectorEnv, TERM_NAMES};
use crate::error::{Error, Result};
use crate::numeric::{ForwardCache, Mlp};
use crate::observation::Features;
use crate::policy::{PolicyTree, TreeWorkspace, ACTION_DIM};

/// Samples of one collection round; sample `t * n_envs + e` is step `t` of
/// environment `e`.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub horizon: usize,
    pub goal_dim: usize,
    /// Values per sample of the frozen frontier outputs.
    pub preload_stride: usize,
    /// Composition weights per sample (parents then residual; 0 for a leaf).
    pub weight_count: usize,
    pub features: Vec<Features>,
    pub goals: Vec<f64>,
    pub preload: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value estimate of each environment's state after the last step.
    pub bootstrap: Vec<f64>,
    pub weights: Vec<f64>,
    pub residual_means: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn goal(&self, i: usize) -> &[f64] {
        &self.goals[i * self.goal_dim..(i + 1) * self.goal_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM]
    }

    pub fn preload(&self, i: usize) -> &[f64] {
        &self.preload[i * self.preload_stride..(i + 1) * self.preload_stride]
    }

    /// Residual weight of sample `i` (composite policies only).
    pub fn residual_weight(&self, i: usize) -> Option<f64> {
        (self.weight_count > 0).then(|| self.weights[(i + 1) * self.weight_count - 1])
    }

    /// Fills advantages (normalized over the whole batch) and returns.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let (n, t_len) = (self.n_envs, self.horizon);
        if self.len() != n * t_len || self.bootstrap.len() != n {
            return Err(Error::Contract("rollout batch has inconsistent lengths".into()));
        }
        self.advantages = vec![0.0; n * t_len];
        self.returns = vec![0.0; n * t_len];
        let mut r = vec![0.0; t_len];
        let mut v = vec![0.0; t_len + 1];
        let mut d = vec![false; t_len];
        for e in 0..n {
            for t in 0..t_len {
                let i = t * n + e;
                r[t] = self.rewards[i];
                v[t] = self.values[i];
                d[t] = self.dones[i];
            }
            v[t_len] = self.bootstrap[e];
            let (adv, ret) = compute_gae(&r, &v, &d, gamma, lambda)?;
            for t in 0..t_len {
                self.advantages[t * n + e] = adv[t];
                self.returns[t * n + e] = ret[t];
            }
        }
        normalize_advantages(&mut self.advantages);
        Ok(())
    }
}

/// Episode and reward statistics of one collection round (unscaled rewards).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub steps: u64,
    pub episodes: u64,
    pub successes: u64,
    pub mean_reward: f64,
    /// Mean per-step value of each unweighted reward term.
    pub mean_terms: Vec<f64>,
    /// Mean per-step effort Σ τ².
    pub mean_effort: f64,
    pub mean_weights: Vec<f64>,
    /// Mean per-step L1 magnitude of the residual mean.
    pub mean_residual_l1: f64,
}

impl RolloutStats {
    pub fn success_rate(&self) -> Option<f64> {
        (self.episodes > 0).then(|| self.successes as f64 / self.episodes as f64)
    }
}

/// Value network over a skill's observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub mlp: Mlp,
}

impl Critic {
    pub fn value(&self, obs: &[f64], cache: &mut ForwardCache) -> Result<f64> {
        Ok(self.mlp.forward(obs, cache)?[0])
    }
}

/// Steps a vector environment with a stochastic policy.
pub struct Collector {
    venv: VectorEnv,
    rng: ChaCha8Rng,
    ws: TreeWorkspace,
    cache: ForwardCache,
    obs: Vec<f64>,
    static_buf: Vec<f64>,
}

impl Collector {
    pub fn new(n_envs: usize, task: TaskKind, scene: &SceneConfig, env_seed: u64, policy_seed: u64) -> Result<Self> {
        Ok(Collector {
            venv: VectorEnv::new(n_envs, task, scene, env_seed)?,
            rng: ChaCha8Rng::seed_from_u64(policy_seed),
            ws: TreeWorkspace::default(),
            cache: ForwardCache::new(),
            obs: Vec::new(),
            static_buf: Vec::new(),
        })
    }

    pub fn envs(&mut self) -> &mut VectorEnv {
        &mut self.venv
    }

    /// Collects `horizon` steps from every environment. Rewards are
    /// multiplied by `reward_scale`; a timed-out step adds the discounted
    /// value of its final state so truncation does not look terminal.
    pub fn collect(
        &mut self,
        tree: &PolicyTree,
        critic: &Critic,
        horizon: usize,
        reward_scale: f64,
        gamma: f64,
    ) -> Result<(RolloutBatch, RolloutStats)> {
        let n = self.venv.len();
        let total = n * horizon;
        let goal_dim = tree.goal_dim();
        let weight_count = if tree.is_composite() { tree.parent_count() + 1 } else { 0 };
        let mut b = RolloutBatch {
            n_envs: n,
            horizon,
            goal_dim,
            preload_stride: 2 * ACTION_DIM * tree.frontier_len(),
            weight_count,
            features: Vec::with_capacity(total),
            goals: Vec::with_capacity(total * goal_dim),
            preload: Vec::with_capacity(total * 2 * ACTION_DIM * tree.frontier_len()),
            actions: Vec::with_capacity(total * ACTION_DIM),
            log_probs: Vec::with_capacity(total),
            rewards: Vec::with_capacity(total),
            values: Vec::with_capacity(total),
            dones: Vec::with_capacity(total),
            bootstrap: Vec::with_capacity(n),
            weights: Vec::with_capacity(total * weight_count),
            residual_means: Vec::with_capacity(total * ACTION_DIM),
            ..Default::default()
        };
        let mut stats = RolloutStats {
            mean_terms: vec![0.0; TERM_NAMES.len()],
            mean_weights: vec![0.0; weight_count],
            ..Default::default()
        };
        let mut actions = vec![0.0; n * ACTION_DIM];
        for _ in 0..horizon {
            for e in 0..n {
                let f = self.venv.features(e);
                let g = self.venv.goal(e);
                let dist = tree.forward(&f, &g, &mut self.ws, None)?;
                let a = dist.sample(&mut self.rng);
                let logp = dist.log_prob(&a);
                tree.export_static(&self.ws, &mut self.static_buf);
                b.preload.extend_from_slice(&self.static_buf);
                if let Some((w_res, mu)) = tree.residual_state(&self.ws) {
                    let _ = w_res;
                    b.residual_means.extend_from_slice(&mu);
                    stats.mean_residual_l1 += mu.iter().map(|x| x.abs()).sum::<f64>();
                } else {
                    b.residual_means.extend_from_slice(&[0.0; ACTION_DIM]);
                }
                if weight_count > 0 {
                    let d = tree.diagnostics(&self.ws, &a);
                    for (acc, w) in stats.mean_weights.iter_mut().zip(&d.weights) {
                        *acc += w;
                    }
                    b.weights.extend_from_slice(&d.weights);
                }
                tree.observation(&f, &g, &mut self.obs);
                let v = critic.value(&self.obs, &mut self.cache)?;
                actions[e * ACTION_DIM..(e + 1) * ACTION_DIM].copy_from_slice(&a);
                b.features.push(f);
                b.goals.extend_from_slice(&g);
                b.actions.extend_from_slice(&a);
                b.log_probs.push(logp);
                b.values.push(v);
            }
            let outcomes = self.venv.step(&actions)?;
            for o in outcomes {
                let mut r = o.reward * reward_scale;
                if let Some((f, g)) = &o.terminal {
                    tree.observation(f, g, &mut self.obs);
                    r += gamma * critic.value(&self.obs, &mut self.cache)?;
                }
                b.rewards.push(r);
                b.dones.push(o.done);
                stats.mean_reward += o.reward;
                for (acc, t) in stats.mean_terms.iter_mut().zip(&o.breakdown.terms) {
                    *acc += t;
                }
                stats.mean_effort += o.tau.iter().map(|t| t * t).sum::<f64>();
                if let Some(s) = &o.summary {
                    stats.episodes += 1;
                    stats.successes += u64::from(s.success);
                }
            }
        }
        for e in 0..n {
            let f = self.venv.features(e);
            let g = self.venv.goal(e);
            tree.observation(&f, &g, &mut self.obs);
            b.bootstrap.push(critic.value(&self.obs, &mut self.cache)?);
        }
        let steps = total as f64;
        stats.steps = total as u64;
        stats.mean_reward /= steps;
        stats.mean_effort /= steps;
        stats.mean_residual_l1 /= steps;
        stats.mean_terms.iter_mut().for_each(|x| *x /= steps);
        stats.mean_weights.iter_mut().for_each(|x| *x /= steps);
        Ok((b, stats))
    }
}
