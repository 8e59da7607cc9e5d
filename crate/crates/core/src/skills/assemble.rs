//! Recursive construction of a skill's policy tree from the graph and the
//! library.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{SkillDecl, SkillGraph};
use super::library::{SkillLibrary, SkillRecord};
use crate::error::{Error, Result};
use crate::observation::feature_width;
use crate::policy::{NetRole, NetSlot, PolicyTree, TreeBuilder, ACTION_DIM};

/// Where the networks of the skill being built come from.
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    /// Fresh initialization from a seed.
    Fresh(u64),
    /// Continue from a saved record (networks stay trainable).
    Resume(&'a SkillRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Library,
    /// Every ancestor freshly initialized and trainable.
    Scratch,
}

#[derive(Debug, Clone, Copy)]
enum SlotSet {
    Leaf { head: usize },
    Composite { goal: Option<usize>, weight: usize, residual: usize },
}

struct Assembler<'a> {
    graph: &'a SkillGraph,
    records: BTreeMap<String, SkillRecord>,
    builder: TreeBuilder,
    slots: BTreeMap<String, SlotSet>,
    rng: ChaCha8Rng,
    source: Source,
}

fn input_dim(decl: &SkillDecl) -> usize {
    feature_width(&decl.task.groups()) + decl.resolved_goal_dim()
}

fn goal_output_dim(graph: &SkillGraph, decl: &SkillDecl) -> Result<usize> {
    let mut total = 0;
    for p in &decl.parents {
        total += graph.get(p)?.resolved_goal_dim();
    }
    Ok(total)
}

impl Assembler<'_> {
    fn fresh_slots(&mut self, decl: &SkillDecl, trainable: bool) -> Result<SlotSet> {
        let hidden = self.graph.hidden_for(decl);
        let inp = input_dim(decl);
        let add = |role, out, rng: &mut ChaCha8Rng, b: &mut TreeBuilder| -> Result<usize> {
            let mut s = NetSlot::fresh(&decl.id, role, inp, &hidden, out, rng)?;
            s.trainable = trainable;
            Ok(b.add_slot(s))
        };
        if decl.is_root() {
            let head = add(NetRole::Policy, ACTION_DIM, &mut self.rng, &mut self.builder)?;
            return Ok(SlotSet::Leaf { head });
        }
        let g = goal_output_dim(self.graph, decl)?;
        let goal = if g > 0 {
            Some(add(NetRole::Goal, g, &mut self.rng, &mut self.builder)?)
        } else {
            None
        };
        let weight = add(NetRole::Weight, decl.parents.len() + 1, &mut self.rng, &mut self.builder)?;
        let residual = add(NetRole::Residual, ACTION_DIM, &mut self.rng, &mut self.builder)?;
        Ok(SlotSet::Composite { goal, weight, residual })
    }

    fn record_slots(&mut self, record: &SkillRecord, trainable: bool) -> Result<SlotSet> {
        let mut take = |role| -> Result<usize> {
            let mut s = record.slot(role)?;
            s.trainable = trainable;
            Ok(self.builder.add_slot(s))
        };
        if record.is_root() {
            return Ok(SlotSet::Leaf {
                head: take(NetRole::Policy)?,
            });
        }
        let goal = if record.blobs.contains_key(NetRole::Goal.file_stem()) {
            Some(take(NetRole::Goal)?)
        } else {
            None
        };
        Ok(SlotSet::Composite {
            goal,
            weight: take(NetRole::Weight)?,
            residual: take(NetRole::Residual)?,
        })
    }

    /// Slots for an ancestor, shared by every node of that skill.
    fn ancestor_slots(&mut self, id: &str) -> Result<SlotSet> {
        if let Some(s) = self.slots.get(id) {
            return Ok(*s);
        }
        let decl = self.graph.get(id)?.clone();
        let set = match self.source {
            Source::Scratch => self.fresh_slots(&decl, true)?,
            Source::Library => {
                let record = self.records[id].clone();
                if record.manifest.parents != decl.parents || record.manifest.task != decl.task {
                    return Err(Error::Contract(format!(
                        "library record `{id}` was trained for task {} with parents [{}], but the graph declares task {} with [{}]",
                        record.manifest.task,
                        record.manifest.parents.join(", "),
                        decl.task,
                        decl.parents.join(", ")
                    )));
                }
                self.record_slots(&record, false)?
            }
        };
        self.slots.insert(id.to_string(), set);
        Ok(set)
    }

    /// Adds a node for `decl` with slot set `set`; parents recurse.
    fn node(&mut self, decl: &SkillDecl, set: SlotSet) -> Result<usize> {
        let groups = decl.task.groups();
        let goal_dim = decl.resolved_goal_dim();
        match set {
            SlotSet::Leaf { head } => self.builder.add_leaf(&decl.id, groups, goal_dim, head),
            SlotSet::Composite { goal, weight, residual } => {
                let mut parents = Vec::with_capacity(decl.parents.len());
                for p in &decl.parents {
                    let pdecl = self.graph.get(p)?.clone();
                    let pset = self.ancestor_slots(p)?;
                    let node = self.node(&pdecl, pset)?;
                    parents.push((node, pdecl.resolved_goal_range()));
                }
                self.builder
                    .add_composite(&decl.id, groups, goal_dim, &parents, goal, weight, residual)
            }
        }
    }
}

fn build(
    graph: &SkillGraph,
    skill_id: &str,
    library: Option<&SkillLibrary>,
    init: Init<'_>,
    source: Source,
) -> Result<PolicyTree> {
    graph.validate()?;
    let decl = graph.get(skill_id)?.clone();
    let mut records = BTreeMap::new();
    if source == Source::Library {
        let lib = library.expect("library source has a library");
        let ancestors = graph.ancestors(skill_id)?;
        let missing: Vec<String> = ancestors.iter().filter(|a| !lib.contains(a)).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::MissingAncestors {
                skill: skill_id.to_string(),
                missing,
            });
        }
        for a in ancestors {
            let r = lib.load(&a)?;
            records.insert(a, r);
        }
    }
    let seed = match init {
        Init::Fresh(s) => s,
        Init::Resume(_) => 0,
    };
    let mut asm = Assembler {
        graph,
        records,
        builder: TreeBuilder::new(),
        slots: BTreeMap::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        source,
    };
    let top = match init {
        Init::Fresh(_) => asm.fresh_slots(&decl, true)?,
        Init::Resume(record) => {
            if record.id() != skill_id {
                return Err(Error::Contract(format!(
                    "cannot resume `{skill_id}` from a record of `{}`",
                    record.id()
                )));
            }
            asm.record_slots(record, true)?
        }
    };
    let root = asm.node(&decl, top)?;
    Ok(asm.builder.finish(root))
}

/// Builds `skill_id` over frozen ancestors loaded from `library`. Fails with
/// the list of missing ancestor ids when any record is absent.
pub fn assemble_policy(graph: &SkillGraph, skill_id: &str, library: &SkillLibrary, init: Init<'_>) -> Result<PolicyTree> {
    build(graph, skill_id, Some(library), init, Source::Library)
}

/// Same architecture as [`assemble_policy`] with every ancestor freshly
/// initialized and trainable.
pub fn assemble_scratch(graph: &SkillGraph, skill_id: &str, seed: u64) -> Result<PolicyTree> {
    build(graph, skill_id, None, Init::Fresh(seed), Source::Scratch)
}

/// A single fresh policy network for `skill_id`'s task, ignoring parents.
pub fn assemble_flat(graph: &SkillGraph, skill_id: &str, hidden: &[usize], seed: u64) -> Result<PolicyTree> {
    let decl = graph.get(skill_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = TreeBuilder::new();
    let head = b.add_slot(NetSlot::fresh(
        &decl.id,
        NetRole::Policy,
        input_dim(decl),
        hidden,
        ACTION_DIM,
        &mut rng,
    )?);
    let root = b.add_leaf(&decl.id, decl.task.groups(), decl.resolved_goal_dim(), head)?;
    Ok(b.finish(root))
}

/// The learnable networks of the top skill of `tree`, in role order, ready
/// to be written as a record.
pub fn top_slots(tree: &PolicyTree) -> Vec<&NetSlot> {
    let skill = &tree.root().skill;
    let mut out: Vec<&NetSlot> = tree
        .slots()
        .iter()
        .filter(|s| &s.skill == skill && s.trainable)
        .collect();
    out.sort_by_key(|s| s.role.file_stem());
    out
}
