//! Skill decomposition graph: declaration, validation and ordering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{load_toml, parse_toml};
use crate::env::TaskKind;
use crate::error::{Error, Result};
use crate::observation::feature_width;

pub const DEFAULT_GRAPH_TOML: &str = include_str!("../../configs/graph.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillDecl {
    pub id: String,
    pub task: TaskKind,
    /// Parent skill ids; their order fixes the weight-network indices.
    #[serde(default)]
    pub parents: Vec<String>,
    /// Observation width; checked against the task when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_dim: Option<usize>,
    /// Width of each parent's slice of the goal-synthesis output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_goal_dims: Option<Vec<usize>>,
    /// Range synthetic goals for this skill are scaled to when it serves as
    /// a parent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_range: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c4: Option<f64>,
}

impl SkillDecl {
    pub fn new(id: &str, task: TaskKind, parents: &[&str]) -> Self {
        SkillDecl {
            id: id.to_string(),
            task,
            parents: parents.iter().map(|p| p.to_string()).collect(),
            state_dim: None,
            goal_dim: None,
            parent_goal_dims: None,
            goal_range: None,
            hidden: None,
            c3: None,
            c4: None,
        }
    }

    pub fn is_root(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn resolved_state_dim(&self) -> usize {
        feature_width(&self.task.groups())
    }

    pub fn resolved_goal_dim(&self) -> usize {
        self.goal_dim.unwrap_or(self.task.goal_dim())
    }

    pub fn resolved_goal_range(&self) -> f64 {
        self.goal_range.unwrap_or(self.task.goal_range())
    }

    /// Residual-weight and residual-magnitude penalty coefficients.
    pub fn penalties(&self) -> (f64, f64) {
        let (c3, c4) = default_penalties(self.task);
        (self.c3.unwrap_or(c3), self.c4.unwrap_or(c4))
    }
}

/// Door, push and crawl skills need larger residuals than navigation skills.
pub fn default_penalties(task: TaskKind) -> (f64, f64) {
    match task {
        TaskKind::DoorEasy | TaskKind::DoorHard | TaskKind::Push | TaskKind::Crawl => (0.1, 0.01),
        _ => (0.5, 0.05),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillGraph {
    /// Hidden widths for skills without their own `hidden`.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(rename = "skill", default)]
    pub skills: Vec<SkillDecl>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

/// One problem found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyId,
    DuplicateId(String),
    DanglingParent { skill: String, parent: String },
    DuplicateParent { skill: String, parent: String },
    Cycle(Vec<String>),
    StateDim { skill: String, declared: usize, task: usize },
    GoalDim { skill: String, declared: usize, task: usize },
    GoalSliceCount { skill: String, slices: usize, parents: usize },
    GoalSlice { skill: String, parent: String, slice: usize, parent_goal: usize },
    Coefficient { skill: String, name: &'static str, value: f64 },
    GoalRange { skill: String, value: f64 },
    Hidden { skill: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "a skill has an empty id"),
            Violation::DuplicateId(id) => write!(f, "skill id `{id}` is declared more than once"),
            Violation::DanglingParent { skill, parent } => {
                write!(f, "skill `{skill}` references unknown parent `{parent}`")
            }
            Violation::DuplicateParent { skill, parent } => {
                write!(f, "skill `{skill}` lists parent `{parent}` twice")
            }
            Violation::Cycle(ids) => write!(f, "cycle: {}", ids.join(" -> ")),
            Violation::StateDim { skill, declared, task } => write!(
                f,
                "skill `{skill}` declares state dim {declared} but its task observes {task}"
            ),
            Violation::GoalDim { skill, declared, task } => write!(
                f,
                "skill `{skill}` declares goal dim {declared} but its task goal has {task}"
            ),
            Violation::GoalSliceCount { skill, slices, parents } => write!(
                f,
                "skill `{skill}` declares {slices} goal slices for {parents} parents"
            ),
            Violation::GoalSlice {
                skill,
                parent,
                slice,
                parent_goal,
            } => write!(
                f,
                "skill `{skill}` synthesizes a {slice}-d goal for `{parent}`, which takes {parent_goal}"
            ),
            Violation::Coefficient { skill, name, value } => {
                write!(f, "skill `{skill}` has invalid {name} = {value}")
            }
            Violation::GoalRange { skill, value } => {
                write!(f, "skill `{skill}` has invalid goal range {value}")
            }
            Violation::Hidden { skill } => write!(f, "skill `{skill}` has a zero hidden width"),
        }
    }
}

impl SkillGraph {
    pub fn default_graph() -> Self {
        SkillGraph::parse(DEFAULT_GRAPH_TOML).expect("bundled graph parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_toml(text, "skill graph")
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_toml(path)
    }

    pub fn ids(&self) -> Vec<String> {
        self.skills.iter().map(|s| s.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Result<&SkillDecl> {
        self.skills.iter().find(|s| s.id == id).ok_or_else(|| Error::UnknownSkill {
            id: id.to_string(),
            known: self.ids(),
        })
    }

    pub fn hidden_for(&self, decl: &SkillDecl) -> Vec<usize> {
        decl.hidden.clone().unwrap_or_else(|| self.hidden.clone())
    }

    /// Fails with every violation found.
    pub fn validate(&self) -> Result<()> {
        let v = validate_graph(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidGraph(v.iter().map(ToString::to_string).collect()))
        }
    }

    /// All skills, parents before children; ties keep declaration order.
    pub fn topological_order(&self) -> Result<Vec<String>> {
        self.validate()?;
        let mut done: BTreeSet<&str> = BTreeSet::new();
        let mut order = Vec::with_capacity(self.skills.len());
        while order.len() < self.skills.len() {
            let next = self
                .skills
                .iter()
                .find(|s| !done.contains(s.id.as_str()) && s.parents.iter().all(|p| done.contains(p.as_str())))
                .expect("acyclic graph always has a ready skill");
            done.insert(&next.id);
            order.push(next.id.clone());
        }
        Ok(order)
    }

    /// Every ancestor of `id` (excluding itself), parents before children.
    pub fn ancestors(&self, id: &str) -> Result<Vec<String>> {
        let mut seen = BTreeSet::new();
        let mut stack = self.get(id)?.parents.clone();
        while let Some(p) = stack.pop() {
            if seen.insert(p.clone()) {
                stack.extend(self.get(&p)?.parents.iter().cloned());
            }
        }
        Ok(self
            .topological_order()?
            .into_iter()
            .filter(|s| seen.contains(s))
            .collect())
    }
}

/// Checks the graph and returns every violation (empty when valid).
pub fn validate_graph(graph: &SkillGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_id: BTreeMap<&str, &SkillDecl> = BTreeMap::new();
    for s in &graph.skills {
        if s.id.trim().is_empty() {
            out.push(Violation::EmptyId);
        } else if by_id.insert(&s.id, s).is_some() {
            out.push(Violation::DuplicateId(s.id.clone()));
        }
    }
    if graph.hidden.contains(&0) {
        out.push(Violation::Hidden { skill: "<default>".into() });
    }

    for s in &graph.skills {
        let mut listed = BTreeSet::new();
        for p in &s.parents {
            if !listed.insert(p) {
                out.push(Violation::DuplicateParent {
                    skill: s.id.clone(),
                    parent: p.clone(),
                });
            }
            if !by_id.contains_key(p.as_str()) {
                out.push(Violation::DanglingParent {
                    skill: s.id.clone(),
                    parent: p.clone(),
                });
            }
        }
        let task_state = s.resolved_state_dim();
        if let Some(d) = s.state_dim {
            if d != task_state {
                out.push(Violation::StateDim {
                    skill: s.id.clone(),
                    declared: d,
                    task: task_state,
                });
            }
        }
        if let Some(d) = s.goal_dim {
            if d != s.task.goal_dim() {
                out.push(Violation::GoalDim {
                    skill: s.id.clone(),
                    declared: d,
                    task: s.task.goal_dim(),
                });
            }
        }
        if let Some(slices) = &s.parent_goal_dims {
            if slices.len() != s.parents.len() {
                out.push(Violation::GoalSliceCount {
                    skill: s.id.clone(),
                    slices: slices.len(),
                    parents: s.parents.len(),
                });
            } else {
                for (p, &slice) in s.parents.iter().zip(slices) {
                    if let Some(pd) = by_id.get(p.as_str()) {
                        let want = pd.resolved_goal_dim();
                        if slice != want {
                            out.push(Violation::GoalSlice {
                                skill: s.id.clone(),
                                parent: p.clone(),
                                slice,
                                parent_goal: want,
                            });
                        }
                    }
                }
            }
        }
        for (name, value) in [("c3", s.c3), ("c4", s.c4)] {
            if let Some(v) = value {
                if !(v.is_finite() && v >= 0.0) {
                    out.push(Violation::Coefficient {
                        skill: s.id.clone(),
                        name,
                        value: v,
                    });
                }
            }
        }
        if let Some(r) = s.goal_range {
            if !(r.is_finite() && r > 0.0) {
                out.push(Violation::GoalRange {
                    skill: s.id.clone(),
                    value: r,
                });
            }
        }
        if s.hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            out.push(Violation::Hidden { skill: s.id.clone() });
        }
    }

    out.extend(find_cycles(graph, &by_id));
    out
}

fn find_cycles(graph: &SkillGraph, by_id: &BTreeMap<&str, &SkillDecl>) -> Vec<Violation> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit<'a>(
        id: &'a str,
        by_id: &BTreeMap<&'a str, &'a SkillDecl>,
        marks: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
        out: &mut Vec<Violation>,
    ) {
        marks.insert(id, Mark::Active);
        path.push(id);
        for p in &by_id[id].parents {
            let Some((&key, _)) = by_id.get_key_value(p.as_str()) else { continue };
            match marks[key] {
                Mark::New => visit(key, by_id, marks, path, out),
                Mark::Active => {
                    let start = path.iter().position(|&x| x == key).expect("active node is on the path");
                    let mut cycle: Vec<String> = path[start..].iter().map(|s| s.to_string()).collect();
                    cycle.push(key.to_string());
                    out.push(Violation::Cycle(cycle));
                }
                Mark::Done => {}
            }
        }
        path.pop();
        marks.insert(id, Mark::Done);
    }

    let mut marks: BTreeMap<&str, Mark> = by_id.keys().map(|&k| (k, Mark::New)).collect();
    let mut out = Vec::new();
    for s in &graph.skills {
        if let Some((&key, _)) = by_id.get_key_value(s.id.as_str()) {
            if marks[key] == Mark::New {
                visit(key, by_id, &mut marks, &mut Vec::new(), &mut out);
            }
        }
    }
    out
}
