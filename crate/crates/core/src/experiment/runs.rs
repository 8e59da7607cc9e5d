//! Training runs and their on-disk artifacts.
//!
//! Each run lives in `<out>/runs/<method>/<skill>/seed-<seed>/`:
//!
//! ```text
//! metrics.jsonl    one JSON object per iteration
//! summary.json     labels, budget and final evaluation
//! policy/          every trainable network plus the critic
//! checkpoint/      latest checkpoint of an unfinished run
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::config::config_hash;
use crate::env::{SceneConfig, TaskKind};
use crate::error::{Error, Result};
use crate::policy::PolicyTree;
use crate::ppo::{
    build_tree, checkpoint_exists, checkpoint_meta, load_checkpoint, save_checkpoint, train_skill, CheckpointMeta, CheckpointPolicy, IterationMetrics, Method, PpoConfig, SkillRun,
    TrainOptions,
};
use crate::skills::{SkillGraph, SkillLibrary};

/// Identity and outcome of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub skill: String,
    pub task: TaskKind,
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub iterations: u64,
    pub env_steps: u64,
    pub final_success: f64,
    pub final_step_effort: f64,
    pub final_tracking_error: f64,
    /// Checksums of the frozen networks the policy was trained on top of.
    pub frozen: Vec<(String, u64)>,
}

/// How [`Experiment::train`] treats existing state.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Continue from the run's checkpoint when it has one.
    pub resume: bool,
    /// Store a CCRL result in the skill library, replacing any record there.
    pub promote: bool,
}

/// A loaded experiment: config, graph, scene and library.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub graph: SkillGraph,
    pub scene: SceneConfig,
    pub library: SkillLibrary,
}

fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl Experiment {
    pub fn open(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let graph = match &config.graph {
            Some(p) => SkillGraph::load(p)?,
            None => SkillGraph::default_graph(),
        };
        graph.validate()?;
        let scene = match &config.scene {
            Some(p) => crate::config::load_toml(p)?,
            None => SceneConfig::default(),
        };
        scene.validate()?;
        for (task, skill) in &config.tasks {
            let decl = graph.get(skill)?;
            if decl.task != *task {
                return Err(Error::Config(format!(
                    "task binding {task} -> {skill}: skill `{skill}` is trained on {}",
                    decl.task
                )));
            }
        }
        for skill in config.skill_ppo.keys() {
            graph.get(skill)?;
            config.ppo_for(skill, 0)?;
        }
        let library = SkillLibrary::open(&config.library)?;
        Ok(Experiment {
            config,
            graph,
            scene,
            library,
        })
    }

    /// Hash of everything that shapes results: graph, scene, methods,
    /// seeds, evaluation size and PPO overrides.
    pub fn hash(&self) -> String {
        let c = &self.config;
        config_hash(&(&self.graph, &self.scene, &c.methods, &c.seeds, c.eval_episodes, &c.ppo, &c.skill_ppo))
    }

    pub fn ppo_for(&self, skill: &str, seed: u64) -> Result<PpoConfig> {
        self.config.ppo_for(skill, seed)
    }

    /// Skill evaluated for `task`.
    pub fn skill_for(&self, task: TaskKind) -> Result<String> {
        if let Some(s) = self.config.tasks.get(&task) {
            return Ok(s.clone());
        }
        self.graph
            .skills
            .iter()
            .find(|s| s.task == task)
            .map(|s| s.id.clone())
            .ok_or_else(|| Error::Config(format!("no skill in the graph is trained on {task}")))
    }

    pub fn run_id(method: Method, skill: &str, seed: u64) -> String {
        format!("{method}/{skill}/seed-{seed}")
    }

    pub fn run_dir(&self, method: Method, skill: &str, seed: u64) -> PathBuf {
        self.config.out.join("runs").join(Self::run_id(method, skill, seed))
    }

    pub fn run_exists(&self, method: Method, skill: &str, seed: u64) -> bool {
        self.run_dir(method, skill, seed).join("summary.json").is_file()
    }

    fn check_parity(&self, skill: &str, method: Method, tree: &PolicyTree) -> Result<()> {
        if method != Method::BigPolicy || self.graph.get(skill)?.is_root() {
            return Ok(());
        }
        let Ok(ccrl) = build_tree(&self.graph, skill, Method::Ccrl, Some(&self.library), 0) else {
            return Ok(());
        };
        let (a, b) = (tree.learnable_params() as f64, ccrl.total_params() as f64);
        if (a - b).abs() > 0.02 * b {
            return Err(Error::Invariant(format!(
                "big-policy `{skill}` has {a} learnable parameters but the CCRL policy has {b} in total"
            )));
        }
        Ok(())
    }

    /// Trains one run and writes its artifacts.
    pub fn train(&self, skill: &str, method: Method, seed: u64, opts: RunOptions) -> Result<RunSummary> {
        let decl = self.graph.get(skill)?;
        let cfg = self.ppo_for(skill, seed)?;
        let dir = self.run_dir(method, skill, seed);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let checkpoint = dir.join("checkpoint");
        self.check_parity(skill, method, &build_tree(&self.graph, skill, method, Some(&self.library), seed)?)?;

        // A resumed run keeps the metrics lines up to its checkpoint.
        let metrics_path = dir.join("metrics.jsonl");
        let mut kept = String::new();
        if opts.resume && checkpoint_exists(&checkpoint) {
            let done = checkpoint_meta(&checkpoint)?.iteration;
            let text = fs::read_to_string(&metrics_path).unwrap_or_default();
            for line in text.lines() {
                let m: IterationMetrics = serde_json::from_str(line)?;
                if m.iter <= done {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
        write_file(&metrics_path, kept.as_bytes())?;
        let file = fs::OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?;
        let mut sink = BufWriter::new(file);
        let run = SkillRun {
            save: opts.promote,
            overwrite: true,
            ..SkillRun::new(&self.graph, skill, method, Some(&self.library), &self.scene, &cfg)
        };
        let (record, trained) = train_skill(
            &run,
            TrainOptions {
                curriculum: false,
                sink: Some(&mut sink),
                checkpoint: (self.config.checkpoint_every > 0).then(|| CheckpointPolicy {
                    dir: checkpoint.clone(),
                    every: self.config.checkpoint_every,
                    resume: opts.resume,
                }),
            },
        )?;
        sink.flush().map_err(|e| Error::io(&metrics_path, e))?;
        let meta = CheckpointMeta {
            skill: skill.to_string(),
            method,
            seed,
            config_hash: record.manifest.config_hash.clone(),
            iteration: trained.iterations,
            env_steps: trained.env_steps,
            stage: None,
        };
        save_checkpoint(&dir.join("policy"), &meta, &trained.tree, &trained.critic)?;
        let summary = RunSummary {
            run_id: Self::run_id(method, skill, seed),
            skill: skill.to_string(),
            task: decl.task,
            method,
            seed,
            config_hash: record.manifest.config_hash.clone(),
            iterations: trained.iterations,
            env_steps: trained.env_steps,
            final_success: trained.final_eval.success_rate,
            final_step_effort: trained.final_eval.mean_step_effort,
            final_tracking_error: trained.final_eval.mean_tracking_error,
            frozen: trained.tree.frozen_checksums(),
        };
        write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
        if checkpoint.exists() {
            fs::remove_dir_all(&checkpoint).map_err(|e| Error::io(&checkpoint, e))?;
        }
        Ok(summary)
    }

    /// Trains every skill of the graph in topological order, promoting each
    /// CCRL result so that its children can build on it.
    pub fn train_all(&self, method: Method, seed: u64, resume: bool, mut progress: impl FnMut(&RunSummary)) -> Result<Vec<RunSummary>> {
        let mut out = Vec::new();
        for skill in self.graph.topological_order()? {
            let s = self.train(&skill, method, seed, RunOptions { resume, promote: true })?;
            progress(&s);
            out.push(s);
        }
        Ok(out)
    }

    pub fn load_summary(&self, method: Method, skill: &str, seed: u64) -> Result<RunSummary> {
        let p = self.run_dir(method, skill, seed).join("summary.json");
        if !p.is_file() {
            return Err(Error::NotFound(Self::run_id(method, skill, seed)));
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The trained policy of a finished run.
    pub fn load_policy(&self, method: Method, skill: &str, seed: u64) -> Result<(RunSummary, PolicyTree)> {
        let summary = self.load_summary(method, skill, seed)?;
        let mut tree = build_tree(&self.graph, skill, method, Some(&self.library), seed)?;
        let (meta, _) = load_checkpoint(&self.run_dir(method, skill, seed).join("policy"), &mut tree)?;
        if meta.config_hash != summary.config_hash {
            return Err(Error::Contract(format!("policy of run {} does not match its summary", summary.run_id)));
        }
        if tree.frozen_checksums() != summary.frozen {
            return Err(Error::Contract(format!(
                "the library skills under run {} changed after it was trained; retrain it",
                summary.run_id
            )));
        }
        Ok((summary, tree))
    }
}
