//! Deterministic evaluation of policies and scripted controllers.

use serde::{Deserialize, Serialize};

use crate::env::{Env, EpisodeSummary, SceneConfig, StepOutcome, TaskKind};
use crate::error::Result;
use crate::policy::{ActionDiagnostics, PolicyTree, TreeWorkspace, ACTION_DIM};

/// Anything that maps an environment state to an action.
pub trait Controller {
    fn act(&mut self, env: &Env) -> Result<Vec<f64>>;

    /// Composition diagnostics of the last action, when the controller has any.
    fn diagnostics(&self) -> Option<&ActionDiagnostics> {
        None
    }
}

/// A policy tree acting with its distribution mean.
pub struct MeanController<'a> {
    tree: &'a PolicyTree,
    ws: TreeWorkspace,
    last: Option<ActionDiagnostics>,
}

impl<'a> MeanController<'a> {
    pub fn new(tree: &'a PolicyTree) -> Self {
        MeanController {
            tree,
            ws: tree.workspace(),
            last: None,
        }
    }
}

impl Controller for MeanController<'_> {
    fn act(&mut self, env: &Env) -> Result<Vec<f64>> {
        let mean = self.tree.forward(&env.features(), &env.goal(), &mut self.ws, None)?.mean.clone();
        self.last = Some(self.tree.diagnostics(&self.ws, &mean));
        Ok(mean)
    }

    fn diagnostics(&self) -> Option<&ActionDiagnostics> {
        self.last.as_ref()
    }
}

/// Always commands zero.
pub struct ZeroController;

impl Controller for ZeroController {
    fn act(&mut self, _env: &Env) -> Result<Vec<f64>> {
        Ok(vec![0.0; ACTION_DIM])
    }
}

/// Turns toward the body-frame target held in the goal and drives at it.
pub struct ScriptedReach;

impl Controller for ScriptedReach {
    fn act(&mut self, env: &Env) -> Result<Vec<f64>> {
        let g = env.goal();
        let (x, y) = (g[0], g[1]);
        let bearing = y.atan2(x);
        let dist = x.hypot(y);
        let forward = if bearing.abs() < 0.6 { (2.0 * dist).min(1.0) } else { 0.0 };
        Ok(vec![forward, (2.0 * bearing).clamp(-1.0, 1.0), 0.0, 0.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub seed: u64,
    pub episodes: usize,
    pub success_rate: f64,
    /// Mean per-episode Σ‖τ‖².
    pub mean_effort: f64,
    /// Mean per-step Σ‖τ‖².
    pub mean_step_effort: f64,
    /// Mean per-episode Σ(Δa)².
    pub mean_action_change: f64,
    pub mean_tracking_error: f64,
    pub mean_length: f64,
    pub records: Vec<EpisodeSummary>,
}

/// Per-step callback: episode index, step index, the action, the outcome.
pub type StepObserver<'a> = dyn FnMut(usize, usize, &Env, &[f64], &StepOutcome, Option<&ActionDiagnostics>) + 'a;

/// Runs one episode per environment seed `seed + i` and aggregates.
pub fn evaluate_controller(
    ctrl: &mut dyn Controller,
    task: TaskKind,
    scene: &SceneConfig,
    stage: Option<u8>,
    episodes: usize,
    seed: u64,
    mut observer: Option<&mut StepObserver<'_>>,
) -> Result<EvalReport> {
    let episodes = episodes.max(1);
    let mut records = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut env = Env::new(task, scene, seed.wrapping_add(ep as u64))?;
        if stage.is_some() {
            env.set_stage(stage);
            env.reset();
        }
        let mut step = 0;
        loop {
            let a = ctrl.act(&env)?;
            let out = env.step(&a)?;
            if let Some(obs) = observer.as_deref_mut() {
                obs(ep, step, &env, &a, &out, ctrl.diagnostics());
            }
            step += 1;
            if let Some(s) = out.summary {
                records.push(s);
                break;
            }
        }
    }
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeSummary) -> f64| records.iter().map(f).sum::<f64>() / n;
    let total_steps: usize = records.iter().map(|r| r.steps).sum();
    Ok(EvalReport {
        task,
        seed,
        episodes,
        success_rate: mean(&|r| f64::from(u8::from(r.success))),
        mean_effort: mean(&|r| r.effort),
        mean_step_effort: records.iter().map(|r| r.effort).sum::<f64>() / total_steps.max(1) as f64,
        mean_action_change: mean(&|r| r.action_change),
        mean_tracking_error: mean(&|r| r.mean_tracking_error),
        mean_length: total_steps as f64 / n,
        records,
    })
}

/// Evaluates `tree` with mean actions.
pub fn evaluate(tree: &PolicyTree, task: TaskKind, scene: &SceneConfig, episodes: usize, seed: u64) -> Result<EvalReport> {
    evaluate_controller(&mut MeanController::new(tree), task, scene, None, episodes, seed, None)
}
