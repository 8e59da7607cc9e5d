//! Ablations of the composition: penalties off, an untrained extra parent,
//! and a redundant parent set for straight walking.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::analysis::{composition_stats, CompositionStats};
use super::compare::paired_eval_seed;
use super::runs::Experiment;
use crate::env::TaskKind;
use crate::error::{Error, Result};
use crate::ppo::{train_skill, Method, PpoConfig, SkillRun, TrainOptions, TrainedPolicy};
use crate::skills::{assemble_policy, top_slots, Init, Manifest, SkillDecl, SkillGraph, SkillLibrary, SkillRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Retrain with c3 = c4 = 0.
    NoPenalty,
    /// Add a randomly initialized, untrained parent.
    ClumsyParent,
    /// Walk straight over {walk, turn-left, turn-right}.
    RedundantParent,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::NoPenalty, Ablation::ClumsyParent, Ablation::RedundantParent];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoPenalty => "no-penalty",
            Ablation::ClumsyParent => "clumsy-parent",
            Ablation::RedundantParent => "redundant-parent",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
            Error::Config(format!("unknown ablation `{s}` (known: {})", names.join(", ")))
        })
    }
}

pub const CLUMSY_ID: &str = "clumsy";
pub const WALK_STRAIGHT_ID: &str = "walk-straight";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub skill: String,
    pub seed: u64,
    pub config_hash: String,
    pub stats: CompositionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub ablation: Ablation,
    pub skill: String,
    pub rows: Vec<AblationRow>,
    /// Seed-averaged comparison metrics.
    pub summary: BTreeMap<String, f64>,
}

impl AblationReport {
    fn mean(&self, variant: &str, f: impl Fn(&CompositionStats) -> f64) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.variant == variant).map(|r| f(&r.stats)).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

/// A CCRL training run outside the experiment's run tree, with its metrics
/// written to `dir/metrics.jsonl`.
pub fn train_variant(
    exp: &Experiment,
    graph: &SkillGraph,
    library: &SkillLibrary,
    skill: &str,
    cfg: &PpoConfig,
    dir: &Path,
) -> Result<(String, TrainedPolicy)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("metrics.jsonl");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut sink = BufWriter::new(file);
    let run = SkillRun::new(graph, skill, Method::Ccrl, Some(library), &exp.scene, cfg);
    let hash = run.config_hash();
    let (_, trained) = train_skill(
        &run,
        TrainOptions {
            sink: Some(&mut sink),
            ..TrainOptions::default()
        },
    )?;
    Ok((hash, trained))
}

fn row(exp: &Experiment, variant: &str, skill: &str, task: TaskKind, seed: u64, hash: String, trained: &TrainedPolicy) -> Result<AblationRow> {
    Ok(AblationRow {
        variant: variant.into(),
        skill: skill.into(),
        seed,
        config_hash: hash,
        stats: composition_stats(&trained.tree, task, &exp.scene, exp.config.eval_episodes, paired_eval_seed(seed))?,
    })
}

/// Copies `ids` from one library into another.
fn copy_records(from: &SkillLibrary, to: &SkillLibrary, ids: &[String]) -> Result<()> {
    for id in ids {
        to.save(&from.load(id)?, true)?;
    }
    Ok(())
}

/// `graph` with an untrained leaf parent appended to `skill`'s parents.
pub fn clumsy_graph(graph: &SkillGraph, skill: &str) -> Result<SkillGraph> {
    let mut g = graph.clone();
    let decl = g.skills.iter_mut().find(|s| s.id == skill).ok_or_else(|| Error::UnknownSkill {
        id: skill.into(),
        known: graph.ids(),
    })?;
    decl.parents.push(CLUMSY_ID.into());
    if let Some(d) = decl.parent_goal_dims.as_mut() {
        d.push(0);
    }
    g.skills.insert(0, SkillDecl::new(CLUMSY_ID, TaskKind::Walk, &[]));
    g.validate()?;
    Ok(g)
}

/// `graph` with a straight-walking skill over walk and both turns.
pub fn redundant_graph(graph: &SkillGraph) -> Result<SkillGraph> {
    let mut g = graph.clone();
    g.skills.push(SkillDecl::new(WALK_STRAIGHT_ID, TaskKind::Walk, &["walk", "turn-left", "turn-right"]));
    g.validate()?;
    Ok(g)
}

/// Saves a randomly initialized record for the clumsy parent.
pub fn save_clumsy_parent(graph: &SkillGraph, library: &SkillLibrary, seed: u64) -> Result<()> {
    let tree = assemble_policy(graph, CLUMSY_ID, library, Init::Fresh(seed))?;
    let decl = graph.get(CLUMSY_ID)?;
    let record = SkillRecord::from_slots(Manifest::for_skill(decl, graph.hidden_for(decl), "untrained"), &top_slots(&tree));
    library.save(&record, true)
}

/// Runs `ablation` for every seed and writes `report.json` under
/// `<out>/ablate/<name>/`.
pub fn ablate(exp: &Experiment, ablation: Ablation, seeds: &[u64]) -> Result<AblationReport> {
    let root = exp.config.out.join("ablate").join(ablation.name());
    let mut rows = Vec::new();
    let mut summary = BTreeMap::new();
    let skill = match ablation {
        Ablation::RedundantParent => WALK_STRAIGHT_ID.to_string(),
        _ => exp.skill_for(TaskKind::ReachEasy)?,
    };
    let vdir = |variant: &str, seed: u64| root.join(variant).join(format!("seed-{seed}"));
    match ablation {
        Ablation::NoPenalty => {
            for &seed in seeds {
                let cfg = exp.ppo_for(&skill, seed)?;
                let (h, t) = train_variant(exp, &exp.graph, &exp.library, &skill, &cfg, &vdir("penalized", seed))?;
                rows.push(row(exp, "penalized", &skill, TaskKind::ReachEasy, seed, h, &t)?);
                let off = PpoConfig {
                    c3: Some(0.0),
                    c4: Some(0.0),
                    ..cfg
                };
                let (h, t) = train_variant(exp, &exp.graph, &exp.library, &skill, &off, &vdir("no-penalty", seed))?;
                rows.push(row(exp, "no-penalty", &skill, TaskKind::ReachEasy, seed, h, &t)?);
            }
        }
        Ablation::ClumsyParent => {
            let graph = clumsy_graph(&exp.graph, &skill)?;
            let scratch = SkillLibrary::open(root.join("library"))?;
            copy_records(&exp.library, &scratch, &exp.graph.ancestors(&skill)?)?;
            for &seed in seeds {
                let cfg = exp.ppo_for(&skill, seed)?;
                let (h, t) = train_variant(exp, &exp.graph, &exp.library, &skill, &cfg, &vdir("baseline", seed))?;
                rows.push(row(exp, "baseline", &skill, TaskKind::ReachEasy, seed, h, &t)?);
                save_clumsy_parent(&graph, &scratch, seed ^ 0xc1a5)?;
                let (h, t) = train_variant(exp, &graph, &scratch, &skill, &cfg, &vdir("clumsy", seed))?;
                rows.push(row(exp, "clumsy", &skill, TaskKind::ReachEasy, seed, h, &t)?);
            }
        }
        Ablation::RedundantParent => {
            let graph = redundant_graph(&exp.graph)?;
            let walk = exp.library.load("walk")?;
            let parent = assemble_policy(&exp.graph, "walk", &exp.library, Init::Resume(&walk))?;
            for &seed in seeds {
                let stats = composition_stats(&parent, TaskKind::Walk, &exp.scene, exp.config.eval_episodes, paired_eval_seed(seed))?;
                rows.push(AblationRow {
                    variant: "parent-walk".into(),
                    skill: "walk".into(),
                    seed,
                    config_hash: walk.manifest.config_hash.clone(),
                    stats,
                });
                let cfg = exp.ppo_for(&skill, seed)?;
                let (h, t) = train_variant(exp, &graph, &exp.library, &skill, &cfg, &vdir("walk-straight", seed))?;
                rows.push(row(exp, "walk-straight", &skill, TaskKind::Walk, seed, h, &t)?);
            }
        }
    }
    let mut report = AblationReport {
        ablation,
        skill,
        rows,
        summary: BTreeMap::new(),
    };
    match ablation {
        Ablation::NoPenalty => {
            for v in ["penalized", "no-penalty"] {
                summary.insert(format!("{v}_residual_weight"), report.mean(v, |s| s.residual_weight()));
                summary.insert(format!("{v}_residual_l1"), report.mean(v, |s| s.residual_l1));
                summary.insert(format!("{v}_success"), report.mean(v, |s| s.success_rate));
            }
        }
        Ablation::ClumsyParent => {
            let base = report.mean("baseline", |s| s.success_rate);
            let clumsy = report.mean("clumsy", |s| s.success_rate);
            summary.insert("baseline_success".into(), base);
            summary.insert("clumsy_success".into(), clumsy);
            summary.insert("success_change".into(), clumsy - base);
            let idx = exp.graph.get(&report.skill)?.parents.len();
            summary.insert("clumsy_weight".into(), report.mean("clumsy", |s| s.mean_weights.get(idx).copied().unwrap_or(0.0)));
        }
        Ablation::RedundantParent => {
            let parent = report.mean("parent-walk", |s| s.tracking_error);
            let composite = report.mean("walk-straight", |s| s.tracking_error);
            summary.insert("parent_tracking_error".into(), parent);
            summary.insert("composite_tracking_error".into(), composite);
            summary.insert("tracking_ratio".into(), composite / parent);
            summary.insert("composite_success".into(), report.mean("walk-straight", |s| s.success_rate));
        }
    }
    report.summary = summary;
    let path = root.join("report.json");
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
