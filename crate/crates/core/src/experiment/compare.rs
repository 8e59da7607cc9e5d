//! Method × task success tables over paired seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::runs::Experiment;
use super::stats::mean_stderr;
use crate::env::TaskKind;
use crate::error::Result;
use crate::ppo::{evaluate, Method};

/// Evaluation seed for training seed `seed`. It does not depend on the
/// method, so every method is evaluated on the same episodes.
pub fn paired_eval_seed(seed: u64) -> u64 {
    seed.wrapping_mul(7_919).wrapping_add(500_000_000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub task: TaskKind,
    pub skill: String,
    /// `None` when no seed of this cell has a finished run.
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub seeds: Vec<u64>,
    pub success: Vec<f64>,
    pub run_ids: Vec<String>,
}

impl Cell {
    pub fn n(&self) -> usize {
        self.success.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub config_hash: String,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub tasks: Vec<TaskKind>,
    pub cells: Vec<Cell>,
    /// Runs that were requested but not found.
    pub missing: Vec<String>,
}

impl ComparisonTable {
    pub fn cell(&self, method: Method, task: TaskKind) -> Option<&Cell> {
        self.cells.iter().find(|c| c.method == method && c.task == task)
    }

    /// Columns: `method,task,skill,mean,stderr,n,seeds,run_ids`; absent
    /// cells have empty mean and stderr. Lists are `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "# seeds={} eval_episodes={}", seeds.join(";"), self.eval_episodes);
        out.push_str("method,task,skill,mean,stderr,n,seeds,run_ids\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for c in &self.cells {
            let seeds: Vec<String> = c.seeds.iter().map(u64::to_string).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.method,
                c.task,
                c.skill,
                opt(c.mean),
                opt(c.stderr),
                c.n(),
                seeds.join(";"),
                c.run_ids.join(";")
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluates every finished run of each method × task × configured seed.
pub fn compare(exp: &Experiment, tasks: &[TaskKind], methods: &[Method]) -> Result<ComparisonTable> {
    let seeds = exp.config.seeds.clone();
    let mut cells = Vec::new();
    let mut missing = Vec::new();
    for &method in methods {
        for &task in tasks {
            let skill = exp.skill_for(task)?;
            let mut cell = Cell {
                method,
                task,
                skill: skill.clone(),
                mean: None,
                stderr: None,
                seeds: Vec::new(),
                success: Vec::new(),
                run_ids: Vec::new(),
            };
            for &seed in &seeds {
                if !exp.run_exists(method, &skill, seed) {
                    missing.push(Experiment::run_id(method, &skill, seed));
                    continue;
                }
                let (summary, tree) = exp.load_policy(method, &skill, seed)?;
                let report = evaluate(&tree, task, &exp.scene, exp.config.eval_episodes, paired_eval_seed(seed))?;
                cell.seeds.push(seed);
                cell.success.push(report.success_rate);
                cell.run_ids.push(summary.run_id);
            }
            if !cell.success.is_empty() {
                let (m, s) = mean_stderr(&cell.success);
                cell.mean = Some(m);
                cell.stderr = Some(s);
            }
            cells.push(cell);
        }
    }
    Ok(ComparisonTable {
        config_hash: exp.hash(),
        eval_episodes: exp.config.eval_episodes,
        seeds,
        methods: methods.to_vec(),
        tasks: tasks.to_vec(),
        cells,
        missing,
    })
}
