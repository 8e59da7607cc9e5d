//! Analysis exports: weight heatmaps, effort series, trajectory dumps and
//! composition statistics.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::features::{goal, observe};
use crate::env::task::{target_grid, INTERACTIVE_START};
use crate::env::world::RobotBody;
use crate::env::{Env, GridSpec, SceneConfig, TaskKind, Vec2};
use crate::error::{Error, Result};
use crate::policy::{ActionDiagnostics, PolicyTree};
use crate::ppo::{evaluate_controller, Controller, MeanController};

/// Labels written into every exported artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub skill: String,
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
}

impl ArtifactMeta {
    fn csv_header(&self, out: &mut String) {
        let _ = writeln!(out, "# skill={}", self.skill);
        let _ = writeln!(out, "# method={}", self.method);
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
    }
}

/// Weight names of a composite policy: parents in order, then `residual`.
pub fn weight_sources(tree: &PolicyTree) -> Vec<String> {
    let mut out = tree.parent_skills();
    out.push("residual".into());
    out
}

/// One weight of a composite policy over a grid of robot positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub meta: ArtifactMeta,
    pub source: String,
    pub index: usize,
    pub grid: GridSpec,
    /// Row-major: `ny` rows of `nx` values, y increasing by row.
    pub values: Vec<f64>,
}

impl Heatmap {
    /// Comment lines with the labels and grid, then one CSV row per y.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        self.meta.csv_header(&mut out);
        let g = &self.grid;
        let _ = writeln!(out, "# source={} index={}", self.source, self.index);
        let _ = writeln!(
            out,
            "# grid x_min={} x_max={} nx={} y_min={} y_max={} ny={}",
            g.x_min, g.x_max, g.nx, g.y_min, g.y_max, g.ny
        );
        for row in self.values.chunks(g.nx.max(1)) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Mean over grid points where `keep` holds, or `None` when none does.
    pub fn mean_where(&self, keep: impl Fn(Vec2) -> bool) -> Option<f64> {
        let sel: Vec<f64> = self
            .grid
            .points()
            .into_iter()
            .zip(&self.values)
            .filter(|(p, _)| keep(*p))
            .map(|(_, v)| *v)
            .collect();
        (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
    }
}

/// Sweeps the robot over `grid` facing +x, everything else fixed to the
/// episode sampled from `seed`, and records weight `index`.
pub fn weight_heatmap(
    tree: &PolicyTree,
    task: TaskKind,
    scene: &SceneConfig,
    index: usize,
    grid: GridSpec,
    meta: ArtifactMeta,
) -> Result<Heatmap> {
    if grid.nx == 0 || grid.ny == 0 {
        return Err(Error::Config("heatmap grid needs at least one point per axis".into()));
    }
    let sources = weight_sources(tree);
    if !tree.is_composite() {
        return Err(Error::Config(format!("skill `{}` has no parents and so no weights", meta.skill)));
    }
    if index >= sources.len() {
        let list: Vec<String> = sources.iter().enumerate().map(|(i, s)| format!("{i} = {s}")).collect();
        return Err(Error::Config(format!(
            "weight index {index} is out of range; sources are {}",
            list.join(", ")
        )));
    }
    let env = Env::new(task, scene, meta.seed)?;
    let mut world = env.world().clone();
    let layout = env.layout().clone();
    let mut values = Vec::with_capacity(grid.nx * grid.ny);
    for p in grid.points() {
        world.robot = RobotBody::at(p, 0.0);
        let w = tree.weights_at(&observe(&world, &layout), &goal(task, &world, &layout))?;
        values.push(w[index]);
    }
    Ok(Heatmap {
        source: sources[index].clone(),
        index,
        grid,
        values,
        meta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortPoint {
    pub step: usize,
    /// Mean Σ‖τ‖² at this step over the episodes still running.
    pub effort: f64,
    /// Mean Σ(Δa)² at this step over the episodes still running.
    pub action_change: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortSeries {
    pub meta: ArtifactMeta,
    pub task: TaskKind,
    pub mean_step_effort: f64,
    pub success_rate: f64,
    pub points: Vec<EffortPoint>,
}

/// Per-step effort of `ctrl` over evaluation episodes seeded from `eval_seed`.
pub fn effort_series(
    ctrl: &mut dyn Controller,
    task: TaskKind,
    scene: &SceneConfig,
    episodes: usize,
    eval_seed: u64,
    meta: ArtifactMeta,
) -> Result<EffortSeries> {
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    let mut prev: Vec<f64> = Vec::new();
    let mut observer = |_ep: usize, step: usize, _env: &Env, a: &[f64], out: &crate::env::StepOutcome, _d: Option<&ActionDiagnostics>| {
        if step == 0 {
            prev = vec![0.0; a.len()];
        }
        if sums.len() <= step {
            sums.push((0.0, 0.0, 0));
        }
        let change: f64 = a.iter().zip(&prev).map(|(x, y)| (x - y).powi(2)).sum();
        let s = &mut sums[step];
        s.0 += out.tau.iter().map(|t| t * t).sum::<f64>();
        s.1 += change;
        s.2 += 1;
        prev.copy_from_slice(a);
    };
    let report = evaluate_controller(ctrl, task, scene, None, episodes, eval_seed, Some(&mut observer))?;
    let points = sums
        .into_iter()
        .enumerate()
        .map(|(step, (e, c, n))| EffortPoint {
            step,
            effort: e / n as f64,
            action_change: c / n as f64,
            episodes: n,
        })
        .collect();
    Ok(EffortSeries {
        meta,
        task,
        mean_step_effort: report.mean_step_effort,
        success_rate: report.success_rate,
        points,
    })
}

/// Columns: `method,skill,seed,step,effort,action_change,episodes`, after
/// one comment line per series with its config hash.
pub fn effort_csv(series: &[EffortSeries]) -> String {
    let mut out = String::new();
    for s in series {
        let _ = writeln!(
            out,
            "# method={} skill={} seed={} task={} config_hash={} mean_step_effort={:.9} success_rate={:.6}",
            s.meta.method, s.meta.skill, s.meta.seed, s.task, s.meta.config_hash, s.mean_step_effort, s.success_rate
        );
    }
    out.push_str("method,skill,seed,step,effort,action_change,episodes\n");
    for s in series {
        for p in &s.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.9},{:.9},{}",
                s.meta.method, s.meta.skill, s.meta.seed, p.step, p.effort, p.action_change, p.episodes
            );
        }
    }
    out
}

/// Lines of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryLine {
    Header {
        meta: ArtifactMeta,
        task: TaskKind,
        episodes: usize,
        start: Option<[f64; 2]>,
    },
    Step {
        episode: usize,
        step: usize,
        target: Option<[f64; 2]>,
        x: f64,
        y: f64,
        yaw: f64,
        action: Vec<f64>,
        weights: Vec<f64>,
        reward: f64,
        done: bool,
        success: bool,
    },
}

/// Targets of a trajectory dump: the target grid minus points too close to
/// the fixed start.
pub fn trajectory_targets() -> Vec<Vec2> {
    target_grid().into_iter().filter(|t| (*t - INTERACTIVE_START).norm() > 1.0).collect()
}

/// Runs `n` mean-action episodes and writes every step as a JSON line.
/// Target tasks start at a fixed point facing +x with targets cycling
/// through [`trajectory_targets`]; other tasks use their sampled episodes.
/// Returns the number of successful episodes.
pub fn trajectories(tree: &PolicyTree, task: TaskKind, scene: &SceneConfig, n: usize, meta: ArtifactMeta, out: &mut dyn Write) -> Result<usize> {
    let targeted = matches!(task, TaskKind::ReachEasy | TaskKind::InteractiveReach);
    let targets = trajectory_targets();
    let write = |out: &mut dyn Write, line: &TrajectoryLine| -> Result<()> {
        let text = serde_json::to_string(line)?;
        writeln!(out, "{text}").map_err(|e| Error::io("trajectory stream", e))
    };
    write(
        out,
        &TrajectoryLine::Header {
            meta: meta.clone(),
            task,
            episodes: n,
            start: targeted.then_some([INTERACTIVE_START.x, INTERACTIVE_START.y]),
        },
    )?;
    let mut ctrl = MeanController::new(tree);
    let mut successes = 0;
    for ep in 0..n {
        let mut env = Env::new(task, scene, meta.seed.wrapping_add(ep as u64))?;
        if targeted {
            let mut world = env.world().clone();
            let mut layout = env.layout().clone();
            world.robot = RobotBody::at(INTERACTIVE_START, 0.0);
            layout.target = Some(targets[ep % targets.len()]);
            env.reset_to(world, layout);
        }
        let mut step = 0;
        loop {
            let a = ctrl.act(&env)?;
            let o = env.step(&a)?;
            let r = &env.world().robot;
            write(
                out,
                &TrajectoryLine::Step {
                    episode: ep,
                    step,
                    target: env.layout().target.map(|t| [t.x, t.y]),
                    x: r.pos.x,
                    y: r.pos.y,
                    yaw: r.yaw,
                    action: a,
                    weights: ctrl.diagnostics().map(|d| d.weights.clone()).unwrap_or_default(),
                    reward: o.reward,
                    done: o.done,
                    success: o.success,
                },
            )?;
            step += 1;
            if o.done {
                successes += usize::from(o.success);
                break;
            }
        }
    }
    Ok(successes)
}

/// How a composite policy mixes its sources during evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionStats {
    pub success_rate: f64,
    pub mean_step_effort: f64,
    pub tracking_error: f64,
    /// Mean weight per source, parents then residual; empty for flat policies.
    pub mean_weights: Vec<f64>,
    /// Mean per-step L1 magnitude of the residual mean action.
    pub residual_l1: f64,
}

impl CompositionStats {
    pub fn residual_weight(&self) -> f64 {
        self.mean_weights.last().copied().unwrap_or(0.0)
    }
}

/// Evaluates `tree` with mean actions and aggregates its composition.
pub fn composition_stats(tree: &PolicyTree, task: TaskKind, scene: &SceneConfig, episodes: usize, seed: u64) -> Result<CompositionStats> {
    let mut weights: Vec<f64> = Vec::new();
    let (mut l1, mut n) = (0.0, 0usize);
    let mut observer = |_: usize, _: usize, _: &Env, _: &[f64], _: &crate::env::StepOutcome, d: Option<&ActionDiagnostics>| {
        if let Some(d) = d {
            if weights.is_empty() {
                weights = vec![0.0; d.weights.len()];
            }
            for (a, w) in weights.iter_mut().zip(&d.weights) {
                *a += w;
            }
            l1 += d.residual_l1;
        }
        n += 1;
    };
    let mut ctrl = MeanController::new(tree);
    let report = evaluate_controller(&mut ctrl, task, scene, None, episodes, seed, Some(&mut observer))?;
    let n = n.max(1) as f64;
    Ok(CompositionStats {
        success_rate: report.success_rate,
        mean_step_effort: report.mean_step_effort,
        tracking_error: report.mean_tracking_error,
        mean_weights: weights.iter().map(|w| w / n).collect(),
        residual_l1: l1 / n,
    })
}
