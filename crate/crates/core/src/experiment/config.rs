//! Experiment configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{load_toml, parse_toml};
use crate::env::TaskKind;
use crate::error::{Error, Result};
use crate::ppo::{Method, PpoConfig};

/// One experiment: which graph and scene, where skills and artifacts live,
/// which methods and seeds to run, and how to override the PPO defaults.
///
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Skill graph file; the bundled graph when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
    /// Scene file; built-in task settings when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(default = "default_library")]
    pub library: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Skill evaluated for a task; by default the skill trained on it.
    #[serde(default)]
    pub tasks: BTreeMap<TaskKind, String>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Iterations between training checkpoints (0 disables them).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    /// PPO settings applied to every run. Every method gets the same
    /// env-step budget unless a skill override changes it.
    #[serde(default)]
    pub ppo: toml::Table,
    /// Per-skill PPO settings applied after `ppo`.
    #[serde(default)]
    pub skill_ppo: BTreeMap<String, toml::Table>,
}

fn default_library() -> PathBuf {
    PathBuf::from("library")
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_eval_episodes() -> usize {
    50
}

fn default_checkpoint_every() -> u64 {
    10
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            graph: None,
            scene: None,
            library: default_library(),
            out: default_out(),
            methods: default_methods(),
            seeds: default_seeds(),
            tasks: BTreeMap::new(),
            eval_episodes: default_eval_episodes(),
            checkpoint_every: default_checkpoint_every(),
            ppo: toml::Table::new(),
            skill_ppo: BTreeMap::new(),
        }
    }
}

fn merge(into: &mut toml::Table, from: &toml::Table) {
    for (k, v) in from {
        into.insert(k.clone(), v.clone());
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        parse_toml(text, "experiment config")
    }

    /// Loads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = load_toml(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(cfg.resolved(base))
    }

    /// Joins every relative path onto `base`.
    pub fn resolved(mut self, base: &Path) -> Self {
        let join = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        self.graph = self.graph.as_ref().map(join);
        self.scene = self.scene.as_ref().map(join);
        self.library = join(&self.library);
        self.out = join(&self.out);
        self
    }

    /// Checks the fields that do not need the graph.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.seeds.is_empty() {
            problems.push("seeds must not be empty".to_string());
        }
        if self.methods.is_empty() {
            problems.push("methods must not be empty".to_string());
        }
        if self.eval_episodes == 0 {
            problems.push("eval_episodes must be positive".to_string());
        }
        for (what, p) in [("graph", &self.graph), ("scene", &self.scene)] {
            if let Some(p) = p {
                if !p.is_file() {
                    problems.push(format!("{what} file {} does not exist", p.display()));
                }
            }
        }
        if let Err(e) = self.ppo_for("", 0) {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// PPO settings for one run of `skill`.
    pub fn ppo_for(&self, skill: &str, seed: u64) -> Result<PpoConfig> {
        let mut table = toml::Table::try_from(PpoConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, &self.ppo);
        if let Some(over) = self.skill_ppo.get(skill) {
            merge(&mut table, over);
        }
        let mut cfg: PpoConfig = table
            .try_into()
            .map_err(|e| Error::Config(format!("ppo settings for `{skill}`: {e}")))?;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_layer_in_order() {
        let cfg = ExperimentConfig::parse(
            r#"
            seeds = [4]
            [ppo]
            lr = 1e-3
            n_envs = 8
            [skill_ppo.walk]
            n_envs = 16
            "#,
        )
        .unwrap();
        let walk = cfg.ppo_for("walk", 4).unwrap();
        let stand = cfg.ppo_for("stand", 5).unwrap();
        assert_eq!((walk.lr, walk.n_envs, walk.seed), (1e-3, 16, 4));
        assert_eq!((stand.n_envs, stand.seed), (8, 5));
        assert_eq!(stand.horizon, PpoConfig::default().horizon);
    }

    #[test]
    fn validation_reports_every_problem() {
        let cfg = ExperimentConfig::parse(
            r#"
            seeds = []
            graph = "/nonexistent/graph.toml"
            [ppo]
            lrr = 1.0
            "#,
        )
        .unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("seeds") && msg.contains("graph file") && msg.contains("lrr"), "{msg}");
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let cfg = ExperimentConfig::parse("library = \"lib\"\nout = \"/abs\"").unwrap().resolved(Path::new("/exp"));
        assert_eq!(cfg.library, PathBuf::from("/exp/lib"));
        assert_eq!(cfg.out, PathBuf::from("/abs"));
    }
}
