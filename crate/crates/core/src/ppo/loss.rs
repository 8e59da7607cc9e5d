//! Clipped PPO objective with residual-weight and residual-magnitude penalties.

use serde::{Deserialize, Serialize};

use super::rollout::{Critic, RolloutBatch};
use crate::error::{Error, Result};
use crate::numeric::ForwardCache;
use crate::policy::{log_prob_grad, GaussianPolicyOutput, PolicyTree, ResidualInjection, TreeGrads, TreeWorkspace, ACTION_DIM};

/// Mean residual weight and L1 norm of the mean residual action over a set
/// of samples. The norm is taken after averaging, so residual means of
/// opposite sign cancel.
pub fn residual_penalties<'a>(weights: impl IntoIterator<Item = f64>, means: impl IntoIterator<Item = &'a [f64]>) -> (f64, f64) {
    let (mut sum_w, mut nw) = (0.0, 0usize);
    for w in weights {
        sum_w += w.abs();
        nw += 1;
    }
    let mut acc: Vec<f64> = Vec::new();
    let mut nm = 0usize;
    for m in means {
        if acc.is_empty() {
            acc = vec![0.0; m.len()];
        }
        for (a, x) in acc.iter_mut().zip(m) {
            *a += x;
        }
        nm += 1;
    }
    let l_rw = if nw == 0 { 0.0 } else { sum_w / nw as f64 };
    let l_rm = if nm == 0 { 0.0 } else { acc.iter().map(|a| (a / nm as f64).abs()).sum() };
    (l_rw, l_rm)
}

/// Penalties of a whole rollout batch, from its stored diagnostics.
pub fn batch_penalties(batch: &RolloutBatch) -> (f64, f64) {
    if batch.weight_count == 0 {
        return (0.0, 0.0);
    }
    residual_penalties(
        (0..batch.len()).filter_map(|i| batch.residual_weight(i)),
        batch.residual_means.chunks(ACTION_DIM),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub clip: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        LossCoefficients {
            clip: 0.2,
            c1: 1.0,
            c2: 0.01,
            c3: 0.5,
            c4: 0.05,
        }
    }
}

/// Minimized objective and its parts on one minibatch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    /// Mean of min(r·A, clip(r)·A); enters the total with a minus sign.
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
    pub l_rw: f64,
    pub l_rm: f64,
    /// Mean per-sample L1 magnitude of the residual mean.
    pub residual_l1: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    /// Set when a ratio was not finite; no gradient was produced.
    pub skipped: bool,
}

/// Buffers reused across minibatches.
#[derive(Debug, Clone, Default)]
pub struct LossScratch {
    ws: Vec<TreeWorkspace>,
    caches: Vec<ForwardCache>,
    dists: Vec<GaussianPolicyOutput>,
    res: Vec<(f64, Vec<f64>)>,
    values: Vec<f64>,
    obs: Vec<f64>,
}

impl LossScratch {
    fn ensure(&mut self, tree: &PolicyTree, n: usize) {
        while self.ws.len() < n {
            self.ws.push(tree.workspace());
            self.caches.push(ForwardCache::new());
        }
        self.dists.clear();
        self.res.clear();
        self.values.clear();
    }
}

/// Gradient sinks for [`ppo_loss`].
pub struct LossGrads<'a> {
    pub policy: &'a mut TreeGrads,
    pub critic: &'a mut [f64],
}

/// Evaluates the loss on samples `idx` of `batch`; with `grads`, adds the
/// gradient of the total into them.
pub fn ppo_loss(
    batch: &RolloutBatch,
    idx: &[usize],
    tree: &PolicyTree,
    critic: &Critic,
    coef: &LossCoefficients,
    grads: Option<LossGrads<'_>>,
    scratch: &mut LossScratch,
) -> Result<LossReport> {
    if idx.is_empty() {
        return Err(Error::Contract("empty minibatch".into()));
    }
    if batch.advantages.len() != batch.len() || batch.returns.len() != batch.len() {
        return Err(Error::Contract("advantages must be computed before the loss".into()));
    }
    let b = idx.len() as f64;
    scratch.ensure(tree, idx.len());
    let composite = tree.is_composite();
    let mut rep = LossReport::default();
    let mut ratios = Vec::with_capacity(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        let pre = (batch.preload_stride > 0).then(|| batch.preload(i));
        let dist = tree.forward(&batch.features[i], batch.goal(i), &mut scratch.ws[k], pre)?;
        let logp = dist.log_prob(batch.action(i));
        rep.entropy += dist.entropy();
        scratch.dists.push(dist.clone());
        if composite {
            scratch.res.push(tree.residual_state(&scratch.ws[k]).expect("composite tree"));
        }
        let log_ratio = logp - batch.log_probs[i];
        let r = log_ratio.exp();
        if !r.is_finite() {
            rep.skipped = true;
            return Ok(rep);
        }
        rep.approx_kl += (r - 1.0) - log_ratio;
        ratios.push(r);
        tree.observation(&batch.features[i], batch.goal(i), &mut scratch.obs);
        let v = critic.value(&scratch.obs, &mut scratch.caches[k])?;
        scratch.values.push(v);
        rep.value += (v - batch.returns[i]).powi(2);
    }
    let (lo, hi) = (1.0 - coef.clip, 1.0 + coef.clip);
    let mut active = Vec::with_capacity(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        let (r, a) = (ratios[k], batch.advantages[i]);
        let rc = r.clamp(lo, hi);
        let unclipped = r * a <= rc * a;
        rep.clip += if unclipped { r * a } else { rc * a };
        rep.clip_frac += f64::from(u8::from(r < lo || r > hi));
        active.push(unclipped);
    }
    let mut mean_res = [0.0; ACTION_DIM];
    if composite {
        let (l_rw, l_rm) = residual_penalties(scratch.res.iter().map(|r| r.0), scratch.res.iter().map(|r| r.1.as_slice()));
        rep.l_rw = l_rw;
        rep.l_rm = l_rm;
        for (_, mu) in &scratch.res {
            for (m, x) in mean_res.iter_mut().zip(mu) {
                *m += x / b;
            }
            rep.residual_l1 += mu.iter().map(|x| x.abs()).sum::<f64>() / b;
        }
    }
    rep.clip /= b;
    rep.value /= b;
    rep.entropy /= b;
    rep.approx_kl /= b;
    rep.clip_frac /= b;
    rep.total = -rep.clip + coef.c1 * rep.value - coef.c2 * rep.entropy + coef.c3 * rep.l_rw + coef.c4 * rep.l_rm;
    if !rep.total.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss {:?}", rep)));
    }

    let Some(g) = grads else { return Ok(rep) };
    let mut d_mean = vec![0.0; ACTION_DIM];
    let mut d_std = vec![0.0; ACTION_DIM];
    let mut inj = ResidualInjection {
        d_weight: coef.c3 / b,
        d_mean: vec![0.0; ACTION_DIM],
    };
    for (d, m) in mean_res.iter().enumerate() {
        inj.d_mean[d] = coef.c4 * sign(*m) / b;
    }
    for (k, &i) in idx.iter().enumerate() {
        let dist = &scratch.dists[k];
        log_prob_grad(dist, batch.action(i), &mut d_mean, &mut d_std);
        let g_lp = if active[k] { -batch.advantages[i] * ratios[k] / b } else { 0.0 };
        for d in 0..ACTION_DIM {
            d_mean[d] *= g_lp;
            d_std[d] = d_std[d] * g_lp - coef.c2 / (b * dist.std[d]);
        }
        tree.backward(&mut scratch.ws[k], &d_mean, &d_std, composite.then_some(&inj), g.policy)?;
        let dv = 2.0 * coef.c1 * (scratch.values[k] - batch.returns[i]) / b;
        critic.mlp.backward(&mut scratch.caches[k], &[dv], Some(&mut *g.critic), None)?;
    }
    Ok(rep)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
