//! Planar quadruped-proxy environments for the ten tasks.

pub mod features;
pub mod geometry;
pub mod reward;
pub mod task;
pub mod world;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use geometry::{Aabb, Vec2};
pub use reward::{compute_reward, RewardBreakdown, RewardConfig, RewardInputs, TERM_NAMES};
pub use task::{EpisodeLayout, EpisodeProgress, GridSpec, SceneConfig, TaskConfig, TaskKind};
pub use world::{World, DT};

use crate::error::{Error, Result};
use crate::observation::Features;
use crate::policy::ACTION_DIM;

/// Aggregates of a finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub success: bool,
    pub steps: usize,
    pub fell: bool,
    pub aborted: bool,
    /// Sum over steps of the squared actuator tracking residual.
    pub effort: f64,
    /// Sum over steps of the squared action change.
    pub action_change: f64,
    pub mean_tracking_error: f64,
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub done: bool,
    pub success: bool,
    /// Ended by the step limit rather than a terminal event.
    pub timeout: bool,
    pub fell: bool,
    /// Ended because the action was not finite.
    pub aborted: bool,
    pub tau: [f64; ACTION_DIM],
    /// Observation of the final state when the episode timed out, for
    /// bootstrapping the value of the truncated tail.
    pub terminal: Option<(Features, Vec<f64>)>,
    pub summary: Option<EpisodeSummary>,
}

pub struct Env {
    task: TaskKind,
    cfg: TaskConfig,
    scene: SceneConfig,
    stage: Option<u8>,
    rng: ChaCha8Rng,
    world: World,
    layout: EpisodeLayout,
    progress: EpisodeProgress,
    max_steps: usize,
    effort: f64,
    action_change: f64,
    episode_return: f64,
    done: bool,
}

impl Env {
    pub fn new(task: TaskKind, scene: &SceneConfig, seed: u64) -> Result<Self> {
        scene.validate()?;
        let cfg = scene.task(task);
        cfg.validate()?;
        let max_steps = (cfg.timeout_s / DT).round().max(1.0) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (world, layout) = task::sample_episode(task, &cfg, scene, None, &mut rng);
        let mut env = Env {
            task,
            cfg,
            scene: scene.clone(),
            stage: None,
            rng,
            world,
            layout,
            progress: EpisodeProgress::default(),
            max_steps,
            effort: 0.0,
            action_change: 0.0,
            episode_return: 0.0,
            done: false,
        };
        env.start_episode();
        Ok(env)
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn layout(&self) -> &EpisodeLayout {
        &self.layout
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn steps(&self) -> usize {
        self.progress.steps
    }

    /// Curriculum stage (0 to 2) used by subsequent resets; `None` is the
    /// full task.
    pub fn set_stage(&mut self, stage: Option<u8>) {
        self.stage = stage;
    }

    pub fn reset(&mut self) {
        let (world, layout) = task::sample_episode(self.task, &self.cfg, &self.scene, self.stage, &mut self.rng);
        self.world = world;
        self.layout = layout;
        self.start_episode();
    }

    /// Starts an episode from a caller-provided state.
    pub fn reset_to(&mut self, world: World, layout: EpisodeLayout) {
        self.world = world;
        self.layout = layout;
        self.start_episode();
    }

    fn start_episode(&mut self) {
        self.progress = EpisodeProgress {
            start: self.world.robot.pos,
            ..Default::default()
        };
        self.effort = 0.0;
        self.action_change = 0.0;
        self.episode_return = 0.0;
        self.done = false;
    }

    pub fn features(&self) -> Features {
        features::observe(&self.world, &self.layout)
    }

    pub fn goal(&self) -> Vec<f64> {
        features::goal(self.task, &self.world, &self.layout)
    }

    /// Advances one step. The action is clamped to `[-1, 1]`; a non-finite
    /// action ends the episode as a failure without moving the world.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != ACTION_DIM {
            return Err(Error::Dimension {
                context: "env action",
                expected: ACTION_DIM,
                got: action.len(),
            });
        }
        if self.done {
            return Err(Error::Contract("step called on a finished episode; reset first".into()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            self.done = true;
            return Ok(StepOutcome {
                reward: 0.0,
                breakdown: RewardBreakdown::default(),
                done: true,
                success: false,
                timeout: false,
                fell: false,
                aborted: true,
                tau: [0.0; ACTION_DIM],
                terminal: None,
                summary: Some(self.summary(false, true)),
            });
        }
        let mut a = [0.0; ACTION_DIM];
        for (dst, src) in a.iter_mut().zip(action) {
            *dst = src.clamp(-1.0, 1.0);
        }
        let prev_action = self.world.robot.prev_action;
        let phys = self.world.step(&a);
        let robot = &self.world.robot;

        self.progress.steps += 1;
        self.progress.yaw_travelled += robot.yaw_rate() * DT;
        let (v_target, w_target) = task::velocity_targets(self.task, &self.cfg, &self.world, &self.layout);
        let v = robot.body_velocity();
        self.progress.tracking_error_sum += (v - v_target).norm() / v_target.norm().max(0.1);

        let inputs = RewardInputs {
            v,
            v_target,
            omega: [robot.wobble_rate[0], robot.wobble_rate[1], robot.yaw_rate()],
            omega_z_target: w_target,
            action: a,
            prev_action,
            actuator_vel: robot.actuator,
            prev_actuator_vel: phys.prev_actuator,
            tau: phys.tau,
            n_contact: phys.n_contact(),
            q_door: self.world.door.as_ref().map(|d| d.angle),
            x_target: match self.task {
                TaskKind::ReachEasy | TaskKind::InteractiveReach => self.layout.target.map(|t| t - robot.pos),
                _ => None,
            },
            x_t2o: match (&self.world.puck, self.layout.puck_target) {
                (Some(p), Some(t)) => Some(t - p.pos),
                _ => None,
            },
            dt: DT,
        };
        let mut breakdown = compute_reward(&inputs, &self.cfg.rewards);

        self.effort += phys.tau.iter().map(|t| t * t).sum::<f64>();
        self.action_change += a.iter().zip(&prev_action).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

        let fell = phys.fell;
        self.progress.fell |= fell;
        let crushed = self.task == TaskKind::Crawl && phys.clearance_violation;
        let timeout = !fell && !crushed && self.progress.steps >= self.max_steps;
        self.progress.timed_out = timeout;
        let success = if self.task.judged_at_timeout() {
            timeout && task::success_predicate(self.task, &self.world, &self.layout, &self.progress)
        } else {
            !fell && !crushed && task::success_predicate(self.task, &self.world, &self.layout, &self.progress)
        };
        if success {
            breakdown.bonus = self.cfg.rewards.success_bonus;
            breakdown.total += breakdown.bonus;
        }
        let done = success || fell || crushed || timeout;
        // A successful step that coincides with the step limit is terminal,
        // not truncated.
        let timeout = timeout && !(success && !self.task.judged_at_timeout());
        self.episode_return += breakdown.total;
        self.done = done;

        let terminal = timeout.then(|| (self.features(), self.goal()));
        Ok(StepOutcome {
            reward: breakdown.total,
            breakdown,
            done,
            success,
            timeout,
            fell,
            aborted: false,
            tau: phys.tau,
            terminal,
            summary: done.then(|| self.summary(success, false)),
        })
    }

    fn summary(&self, success: bool, aborted: bool) -> EpisodeSummary {
        EpisodeSummary {
            success,
            steps: self.progress.steps,
            fell: self.progress.fell,
            aborted,
            effort: self.effort,
            action_change: self.action_change,
            mean_tracking_error: self.progress.mean_tracking_error(),
            episode_return: self.episode_return,
        }
    }
}

/// `n` independent environments; environment `i` is seeded with
/// `base_seed + i` and resets itself when its episode ends.
pub struct VectorEnv {
    envs: Vec<Env>,
}

impl VectorEnv {
    pub fn new(n: usize, task: TaskKind, scene: &SceneConfig, base_seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("vector env needs at least one environment".into()));
        }
        let envs = (0..n)
            .map(|i| Env::new(task, scene, base_seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorEnv { envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    pub fn env_mut(&mut self, i: usize) -> &mut Env {
        &mut self.envs[i]
    }

    pub fn set_stage(&mut self, stage: Option<u8>) {
        for e in &mut self.envs {
            e.set_stage(stage);
        }
    }

    pub fn reset_all(&mut self) {
        for e in &mut self.envs {
            e.reset();
        }
    }

    pub fn features(&self, i: usize) -> Features {
        self.envs[i].features()
    }

    pub fn goal(&self, i: usize) -> Vec<f64> {
        self.envs[i].goal()
    }

    /// Steps every environment with its row of `actions` (row-major,
    /// `len() * ACTION_DIM` values).
    pub fn step(&mut self, actions: &[f64]) -> Result<Vec<StepOutcome>> {
        let order: Vec<usize> = (0..self.envs.len()).collect();
        self.step_in_order(actions, &order)
    }

    /// Same as [`VectorEnv::step`] but visiting environments in `order`.
    /// Results are still indexed by environment.
    pub fn step_in_order(&mut self, actions: &[f64], order: &[usize]) -> Result<Vec<StepOutcome>> {
        let n = self.envs.len();
        if actions.len() != n * ACTION_DIM {
            return Err(Error::Dimension {
                context: "vector env actions",
                expected: n * ACTION_DIM,
                got: actions.len(),
            });
        }
        let mut seen = vec![false; n];
        for &i in order {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Contract("step order must be a permutation".into()));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Contract("step order must be a permutation".into()));
        }
        let mut out: Vec<Option<StepOutcome>> = vec![None; n];
        for &i in order {
            let env = &mut self.envs[i];
            let o = env.step(&actions[i * ACTION_DIM..(i + 1) * ACTION_DIM])?;
            if o.done {
                env.reset();
            }
            out[i] = Some(o);
        }
        Ok(out.into_iter().map(|o| o.expect("every index visited")).collect())
    }
}
