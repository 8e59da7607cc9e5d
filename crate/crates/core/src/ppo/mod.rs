//! PPO with residual penalties: rollouts, advantages, loss, evaluation and
//! the per-skill training loop.

pub mod checkpoint;
pub mod eval;
pub mod gae;
pub mod loss;
pub mod rollout;
pub mod train;

pub use checkpoint::{checkpoint_exists, checkpoint_meta, load_checkpoint, save_checkpoint, CheckpointMeta};
pub use eval::{evaluate, evaluate_controller, Controller, EvalReport, MeanController, ScriptedReach, StepObserver, ZeroController};
pub use gae::{compute_gae, normalize_advantages};
pub use loss::{batch_penalties, ppo_loss, residual_penalties, LossCoefficients, LossGrads, LossReport, LossScratch};
pub use rollout::{Collector, Critic, RolloutBatch, RolloutStats};
pub use train::{
    build_tree, train_policy, train_skill, CheckpointPolicy, IterationMetrics, Method, MetricsSink, PpoConfig, RunLabel, SkillRun,
    TrainOptions, TrainedPolicy,
};
