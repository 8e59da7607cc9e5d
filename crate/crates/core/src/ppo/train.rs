//! The PPO training loop over a policy tree with a fresh critic.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{checkpoint_exists, load_checkpoint, save_checkpoint, CheckpointMeta};
use super::eval::{evaluate, EvalReport};
use super::loss::{batch_penalties, ppo_loss, LossCoefficients, LossGrads, LossReport, LossScratch};
use super::rollout::{Collector, Critic};
use crate::config::config_hash;
use crate::env::{SceneConfig, TaskKind, TERM_NAMES};
use crate::error::{Error, Result};
use crate::numeric::{AdamConfig, AdamState, Mlp, NetworkSpec};
use crate::policy::PolicyTree;
use crate::skills::{assemble_flat, assemble_policy, assemble_scratch, top_slots, Init, Manifest, SkillGraph, SkillLibrary, SkillRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub n_envs: usize,
    pub horizon: usize,
    pub total_env_steps: u64,
    pub lr: f64,
    pub critic_lr: f64,
    /// Global gradient-norm bound, applied to policy and critic separately.
    pub max_grad_norm: f64,
    /// Multiplier applied to environment rewards before advantage estimation.
    pub reward_scale: f64,
    pub c1: f64,
    pub c2: f64,
    /// Overrides of the skill's residual penalty coefficients.
    pub c3: Option<f64>,
    pub c4: Option<f64>,
    pub critic_hidden: Vec<usize>,
    /// Iterations between evaluations (0 disables periodic evaluation).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub target_success: f64,
    /// Consecutive evaluations at or above target that stop training.
    pub patience: usize,
    /// Rollout success rate that advances a curriculum stage.
    pub stage_advance: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            epochs: 4,
            minibatch: 512,
            n_envs: 64,
            horizon: 256,
            total_env_steps: 2_000_000,
            lr: 3e-4,
            critic_lr: 1e-3,
            max_grad_norm: 0.5,
            reward_scale: 0.05,
            c1: 1.0,
            c2: 0.01,
            c3: None,
            c4: None,
            critic_hidden: vec![64, 64],
            eval_every: 5,
            eval_episodes: 20,
            target_success: 0.95,
            patience: 3,
            stage_advance: 0.7,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.clip > 0.0 && self.clip < 1.0) {
            bad.push(format!("clip {} must lie in (0, 1)", self.clip));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(v > 0.0 && v < 1.0) {
                bad.push(format!("{name} {v} must lie in (0, 1)"));
            }
        }
        for (name, v) in [
            ("c1", Some(self.c1)),
            ("c2", Some(self.c2)),
            ("c3", self.c3),
            ("c4", self.c4),
            ("lr", Some(self.lr)),
            ("critic_lr", Some(self.critic_lr)),
            ("reward_scale", Some(self.reward_scale)),
            ("max_grad_norm", Some(self.max_grad_norm)),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    bad.push(format!("{name} {v} must be a finite value >= 0"));
                }
            }
        }
        for (name, v) in [("epochs", self.epochs), ("minibatch", self.minibatch), ("n_envs", self.n_envs), ("horizon", self.horizon)] {
            if v == 0 {
                bad.push(format!("{name} must be at least 1"));
            }
        }
        if self.critic_hidden.contains(&0) {
            bad.push("critic hidden widths must be at least 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Loss coefficients with the skill's penalties unless overridden.
    pub fn coefficients(&self, skill_penalties: (f64, f64)) -> LossCoefficients {
        LossCoefficients {
            clip: self.clip,
            c1: self.c1,
            c2: self.c2,
            c3: self.c3.unwrap_or(skill_penalties.0),
            c4: self.c4.unwrap_or(skill_penalties.1),
        }
    }

    pub fn iterations(&self) -> u64 {
        let per = (self.n_envs * self.horizon) as u64;
        self.total_env_steps.div_ceil(per).max(1)
    }
}

/// How the trained policy is constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Composite over frozen parents from the library.
    Ccrl,
    /// One fresh network on the final task.
    Vanilla,
    /// The composite architecture with every network fresh and trainable.
    BigPolicy,
    /// One fresh network trained through the task's staged schedule.
    Curriculum,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ccrl, Method::Vanilla, Method::BigPolicy, Method::Curriculum];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ccrl => "ccrl",
            Method::Vanilla => "vanilla",
            Method::BigPolicy => "big-policy",
            Method::Curriculum => "curriculum",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected ccrl, vanilla, big-policy or curriculum)")))
    }
}

/// One JSON-lines record per training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub skill: String,
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub iter: u64,
    pub env_steps: u64,
    pub stage: Option<u8>,
    pub rollout_success: Option<f64>,
    /// Success rate of the periodic mean-action evaluation, when run.
    pub eval_success: Option<f64>,
    pub mean_reward: f64,
    pub reward_terms: BTreeMap<String, f64>,
    pub l_rw: f64,
    pub l_rm: f64,
    pub residual_l1: f64,
    /// Mean composition weight per parent and for the residual.
    pub weights: BTreeMap<String, f64>,
    pub effort: f64,
    pub loss: LossReport,
    pub skipped_minibatches: u64,
}

/// Result of training one policy.
#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub tree: PolicyTree,
    pub critic: Critic,
    pub metrics: Vec<IterationMetrics>,
    pub final_eval: EvalReport,
    pub env_steps: u64,
    pub iterations: u64,
}

/// Labels identifying a run in its metrics stream.
#[derive(Debug, Clone)]
pub struct RunLabel {
    pub skill: String,
    pub method: Method,
    pub config_hash: String,
}

/// Sink for serialized metrics lines.
pub type MetricsSink<'a> = Option<&'a mut dyn Write>;

/// Per-slot Adam state over parameters and log-stddevs.
struct SlotOptimizers {
    slots: Vec<usize>,
    params: Vec<AdamState>,
    log_std: Vec<AdamState>,
}

impl SlotOptimizers {
    fn new(tree: &PolicyTree, cfg: AdamConfig) -> Self {
        let slots: Vec<usize> = tree.trainable_slots().collect();
        let params = slots.iter().map(|&i| AdamState::new(tree.slots()[i].mlp.param_count(), cfg)).collect();
        let log_std = slots.iter().map(|&i| AdamState::new(tree.slots()[i].log_std.len(), cfg)).collect();
        SlotOptimizers { slots, params, log_std }
    }

    fn step(&mut self, tree: &mut PolicyTree, grads: &crate::policy::TreeGrads) -> Result<()> {
        for (k, &i) in self.slots.iter().enumerate() {
            let slot = &mut tree.slots_mut()[i];
            self.params[k].step(slot.mlp.store_mut().params_mut(), &grads.params[i])?;
            if !slot.log_std.is_empty() {
                self.log_std[k].step(&mut slot.log_std, &grads.log_std[i])?;
            }
        }
        Ok(())
    }
}

fn clip_norm(sq: f64, max: f64) -> f64 {
    let n = sq.sqrt();
    if max > 0.0 && n > max {
        max / n
    } else {
        1.0
    }
}

fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(900_000_000)
}

/// Periodic checkpointing of a run, with optional resumption.
#[derive(Debug, Clone)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
    /// Iterations between checkpoints.
    pub every: u64,
    /// Continue from an existing checkpoint with the same config hash.
    pub resume: bool,
}

/// Optional behavior of a training run.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Start episodes at curriculum stage 0 and advance when the rollout
    /// success rate reaches `PpoConfig::stage_advance`.
    pub curriculum: bool,
    pub sink: MetricsSink<'a>,
    pub checkpoint: Option<CheckpointPolicy>,
}

/// Trains the trainable slots of `tree` on `task` with a fresh critic.
/// A resumed run restarts its random streams from the checkpointed
/// iteration, so it is reproducible but not identical to an uninterrupted run.
pub fn train_policy(
    mut tree: PolicyTree,
    task: TaskKind,
    skill_penalties: (f64, f64),
    scene: &SceneConfig,
    cfg: &PpoConfig,
    label: &RunLabel,
    mut opts: TrainOptions<'_>,
) -> Result<TrainedPolicy> {
    cfg.validate()?;
    let coef = cfg.coefficients(skill_penalties);
    let staged = opts.curriculum && task.has_stages();
    let mut stage: Option<u8> = staged.then_some(0);
    let mut iter = 0u64;
    let mut env_steps = 0u64;
    let mut critic = None;
    if let Some(cp) = opts.checkpoint.as_ref().filter(|c| c.resume && checkpoint_exists(&c.dir)) {
        let (meta, c) = load_checkpoint(&cp.dir, &mut tree)?;
        if meta.config_hash != label.config_hash || meta.skill != label.skill || meta.seed != cfg.seed {
            return Err(Error::Config(format!(
                "checkpoint in {} belongs to another run (skill {}, seed {}, config {})",
                cp.dir.display(),
                meta.skill,
                meta.seed,
                meta.config_hash
            )));
        }
        iter = meta.iteration;
        env_steps = meta.env_steps;
        stage = meta.stage;
        critic = Some(c);
    }
    let stream = cfg.seed ^ iter.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(stream ^ 0x5eed_c217);
    let mut critic = match critic {
        Some(c) => c,
        None => Critic {
            mlp: Mlp::init(NetworkSpec::new(tree.input_dim(), &cfg.critic_hidden, 1), &mut rng, 1.0)?,
        },
    };
    let adam = |lr| AdamConfig { lr, ..AdamConfig::default() };
    let mut opt = SlotOptimizers::new(&tree, adam(cfg.lr));
    let mut critic_opt = AdamState::new(critic.mlp.param_count(), adam(cfg.critic_lr));
    let mut collector = Collector::new(cfg.n_envs, task, scene, stream.wrapping_mul(100_003), stream ^ 0xac71_0000)?;
    if stage.is_some() {
        collector.envs().set_stage(stage);
        collector.envs().reset_all();
    }
    let mut grads = tree.grads();
    let mut critic_grad = vec![0.0; critic.mlp.param_count()];
    let mut scratch = LossScratch::default();
    let mut metrics = Vec::new();
    let mut streak = 0usize;
    let iterations = cfg.iterations();
    while iter < iterations {
        iter += 1;
        let (mut batch, stats) = collector.collect(&tree, &critic, cfg.horizon, cfg.reward_scale, cfg.gamma)?;
        env_steps += stats.steps;
        batch.finish(cfg.gamma, cfg.lambda)?;
        let (l_rw, l_rm) = batch_penalties(&batch);
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mb = cfg.minibatch.min(batch.len());
        let mut skipped = 0u64;
        let mut last = LossReport::default();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(mb) {
                if chunk.len() < mb / 2 {
                    continue;
                }
                grads.zero();
                critic_grad.iter_mut().for_each(|g| *g = 0.0);
                let rep = ppo_loss(
                    &batch,
                    chunk,
                    &tree,
                    &critic,
                    &coef,
                    Some(LossGrads {
                        policy: &mut grads,
                        critic: &mut critic_grad,
                    }),
                    &mut scratch,
                )?;
                if rep.skipped {
                    skipped += 1;
                    continue;
                }
                grads.scale(clip_norm(grads.sq_norm(), cfg.max_grad_norm));
                let cs = clip_norm(critic_grad.iter().map(|g| g * g).sum(), cfg.max_grad_norm);
                critic_grad.iter_mut().for_each(|g| *g *= cs);
                opt.step(&mut tree, &grads).map_err(|e| Error::Diverged(format!("policy update: {e}")))?;
                critic_opt
                    .step(critic.mlp.store_mut().params_mut(), &critic_grad)
                    .map_err(|e| Error::Diverged(format!("critic update: {e}")))?;
                tree.verify_frozen()?;
                last = rep;
            }
        }
        let rollout_success = stats.success_rate();
        if let (Some(s), Some(rate)) = (stage, rollout_success) {
            if rate >= cfg.stage_advance {
                stage = if s >= 1 { None } else { Some(s + 1) };
                collector.envs().set_stage(stage);
                collector.envs().reset_all();
            }
        }
        let eval_success = if cfg.eval_every > 0 && iter.is_multiple_of(cfg.eval_every as u64) && stage.is_none() {
            Some(evaluate(&tree, task, scene, cfg.eval_episodes, eval_seed(cfg.seed))?.success_rate)
        } else {
            None
        };
        let mut weights = BTreeMap::new();
        if !stats.mean_weights.is_empty() {
            for (name, w) in tree.parent_skills().into_iter().chain(["residual".to_string()]).zip(&stats.mean_weights) {
                weights.insert(name, *w);
            }
        }
        let m = IterationMetrics {
            skill: label.skill.clone(),
            method: label.method,
            seed: cfg.seed,
            config_hash: label.config_hash.clone(),
            iter,
            env_steps,
            stage,
            rollout_success,
            eval_success,
            mean_reward: stats.mean_reward,
            reward_terms: TERM_NAMES.iter().map(|n| n.to_string()).zip(stats.mean_terms.iter().copied()).collect(),
            l_rw,
            l_rm,
            residual_l1: stats.mean_residual_l1,
            weights,
            effort: stats.mean_effort,
            loss: last,
            skipped_minibatches: skipped,
        };
        if let Some(w) = opts.sink.as_deref_mut() {
            let line = serde_json::to_string(&m).map_err(|e| Error::Config(format!("metrics encoding: {e}")))?;
            writeln!(w, "{line}").map_err(|e| Error::io("metrics stream", e))?;
        }
        metrics.push(m);
        if let Some(cp) = &opts.checkpoint {
            if cp.every > 0 && iter.is_multiple_of(cp.every) {
                let meta = CheckpointMeta {
                    skill: label.skill.clone(),
                    method: label.method,
                    seed: cfg.seed,
                    config_hash: label.config_hash.clone(),
                    iteration: iter,
                    env_steps,
                    stage,
                };
                save_checkpoint(&cp.dir, &meta, &tree, &critic)?;
            }
        }
        if let Some(s) = eval_success {
            streak = if s >= cfg.target_success { streak + 1 } else { 0 };
            if cfg.patience > 0 && streak >= cfg.patience {
                break;
            }
        }
    }
    tree.verify_frozen()?;
    let final_eval = evaluate(&tree, task, scene, cfg.eval_episodes, eval_seed(cfg.seed))?;
    Ok(TrainedPolicy {
        tree,
        critic,
        metrics,
        final_eval,
        env_steps,
        iterations: iter,
    })
}

/// Builds the initial tree for `method`.
pub fn build_tree(graph: &SkillGraph, skill: &str, method: Method, library: Option<&SkillLibrary>, seed: u64) -> Result<PolicyTree> {
    match method {
        Method::Ccrl => {
            let lib = library.ok_or_else(|| Error::Config("the ccrl method needs a skill library".into()))?;
            assemble_policy(graph, skill, lib, Init::Fresh(seed))
        }
        Method::BigPolicy => assemble_scratch(graph, skill, seed),
        Method::Vanilla | Method::Curriculum => {
            let decl = graph.get(skill)?;
            assemble_flat(graph, skill, &graph.hidden_for(decl), seed)
        }
    }
}

/// What to train and where its result goes.
#[derive(Clone, Copy)]
pub struct SkillRun<'a> {
    pub graph: &'a SkillGraph,
    pub skill: &'a str,
    pub method: Method,
    pub library: Option<&'a SkillLibrary>,
    pub scene: &'a SceneConfig,
    pub cfg: &'a PpoConfig,
    /// Write the CCRL record into the library.
    pub save: bool,
    pub overwrite: bool,
}

impl<'a> SkillRun<'a> {
    pub fn new(graph: &'a SkillGraph, skill: &'a str, method: Method, library: Option<&'a SkillLibrary>, scene: &'a SceneConfig, cfg: &'a PpoConfig) -> Self {
        SkillRun {
            graph,
            skill,
            method,
            library,
            scene,
            cfg,
            save: false,
            overwrite: false,
        }
    }

    /// Canonical hash of everything that determines the run except the seed.
    pub fn config_hash(&self) -> String {
        let mut cfg = self.cfg.clone();
        cfg.seed = 0;
        config_hash(&(self.graph, self.scene, &cfg, self.method, self.skill))
    }
}

/// Trains `run.skill` with `run.method` and returns its record and policy.
pub fn train_skill(run: &SkillRun<'_>, opts: TrainOptions<'_>) -> Result<(SkillRecord, TrainedPolicy)> {
    let decl = run.graph.get(run.skill)?;
    let tree = build_tree(run.graph, run.skill, run.method, run.library, run.cfg.seed)?;
    let hash = run.config_hash();
    let label = RunLabel {
        skill: run.skill.to_string(),
        method: run.method,
        config_hash: hash.clone(),
    };
    let opts = TrainOptions {
        curriculum: opts.curriculum || run.method == Method::Curriculum,
        ..opts
    };
    let trained = train_policy(tree, decl.task, decl.penalties(), run.scene, run.cfg, &label, opts)?;
    let mut manifest = Manifest::for_skill(decl, run.graph.hidden_for(decl), run.method.name());
    if run.method != Method::Ccrl {
        manifest.parents.clear();
    }
    manifest.seeds = vec![run.cfg.seed];
    manifest.config_hash = hash;
    manifest.env_steps = trained.env_steps;
    manifest.iterations = trained.iterations;
    manifest.final_success = trained.final_eval.success_rate;
    let record = SkillRecord::from_slots(manifest, &top_slots(&trained.tree));
    if run.save && run.method == Method::Ccrl {
        if let Some(lib) = run.library {
            lib.save(&record, run.overwrite)?;
        }
    }
    Ok((record, trained))
}
