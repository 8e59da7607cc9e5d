//! Recursive composite policies.
//!
//! A [`PolicyTree`] is an arena of nodes. A leaf is a single Gaussian policy
//! network; a composite node owns a goal-synthesis network, a weight network
//! and a residual policy, and combines its parents (themselves nodes) plus the
//! residual with [`compose_mcp`]. Network parameters live in [`NetSlot`]s that
//! nodes reference by index, so a skill reached along two paths shares one
//! parameter set.
//!
//! Nodes that contain no trainable slot and receive no goal are *static*:
//! their output depends only on the world features, so it is memoized per
//! forward pass and can be stored in rollout batches instead of recomputed.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::compose::{
    bound_goal, compose_mcp, compose_mcp_backward, squash_weight_grad, squash_weights, ComposeGrads,
};
use super::gaussian::{clamp_std, GaussianPolicyOutput};
use crate::error::{Error, Result};
use crate::numeric::{checksum_f64, ForwardCache, Mlp, NetworkSpec};
use crate::observation::{feature_indices, FeatureGroup, Features};

/// Action channels: forward speed, yaw rate, lateral speed, height rate.
pub const ACTION_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetRole {
    Policy,
    Residual,
    Weight,
    Goal,
}

impl NetRole {
    pub fn file_stem(self) -> &'static str {
        match self {
            NetRole::Policy => "policy",
            NetRole::Residual => "residual",
            NetRole::Weight => "weight",
            NetRole::Goal => "goal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSlot {
    pub skill: String,
    pub role: NetRole,
    pub mlp: Mlp,
    /// State-independent log-stddev; empty for weight and goal networks.
    pub log_std: Vec<f64>,
    pub trainable: bool,
}

/// Initial per-dimension log-stddev of policy and residual heads.
pub fn init_log_std() -> f64 {
    0.6f64.ln()
}

impl NetSlot {
    /// Freshly initialized, trainable slot. Policy and residual heads get a
    /// log-stddev vector and a final layer scaled down to 0.01; weight
    /// networks also start near zero (all weights near 0.5).
    pub fn fresh<R: Rng + ?Sized>(
        skill: &str,
        role: NetRole,
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = NetworkSpec::new(input_dim, hidden, output_dim);
        let final_scale = match role {
            NetRole::Policy | NetRole::Residual | NetRole::Weight => 0.01,
            NetRole::Goal => 1.0,
        };
        let log_std = match role {
            NetRole::Policy | NetRole::Residual => vec![init_log_std(); output_dim],
            NetRole::Weight | NetRole::Goal => Vec::new(),
        };
        Ok(NetSlot {
            skill: skill.to_string(),
            role,
            mlp: Mlp::init(spec, rng, final_scale)?,
            log_std,
            trainable: true,
        })
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn name(&self) -> String {
        format!("{}/{}", self.skill, self.role.file_stem())
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count() + self.log_std.len()
    }

    pub fn checksum(&self) -> u64 {
        let mut all = self.mlp.store().params().to_vec();
        all.extend_from_slice(&self.log_std);
        checksum_f64(&all)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParentLink {
    pub node: usize,
    /// Offset of this parent's goal inside the goal network output.
    pub goal_offset: usize,
    pub goal_dim: usize,
    pub goal_range: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf {
        head: usize,
    },
    Composite {
        parents: Vec<ParentLink>,
        goal_net: Option<usize>,
        weight_net: usize,
        residual: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNode {
    pub skill: String,
    pub groups: Vec<FeatureGroup>,
    pub goal_dim: usize,
    pub kind: NodeKind,
    feature_idx: Vec<usize>,
    static_id: Option<usize>,
}

impl PolicyNode {
    pub fn input_dim(&self) -> usize {
        self.feature_idx.len() + self.goal_dim
    }

    pub fn is_static(&self) -> bool {
        self.static_id.is_some()
    }
}

/// Incrementally builds a [`PolicyTree`].
#[derive(Debug, Default)]
pub struct TreeBuilder {
    slots: Vec<NetSlot>,
    nodes: Vec<PolicyNode>,
    consumed: Vec<bool>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_slot(&mut self, slot: NetSlot) -> usize {
        self.slots.push(slot);
        self.slots.len() - 1
    }

    pub fn slot(&self, idx: usize) -> &NetSlot {
        &self.slots[idx]
    }

    fn check_input(&self, slot: usize, groups: &[FeatureGroup], goal_dim: usize, what: &str) -> Result<()> {
        let expected = feature_indices(groups).len() + goal_dim;
        let got = self.slots[slot].mlp.input_dim();
        if expected != got {
            return Err(Error::Dimension {
                context: leak_context(what),
                expected,
                got,
            });
        }
        Ok(())
    }

    pub fn add_leaf(
        &mut self,
        skill: &str,
        groups: Vec<FeatureGroup>,
        goal_dim: usize,
        head: usize,
    ) -> Result<usize> {
        self.check_input(head, &groups, goal_dim, "leaf policy input")?;
        let slot = &self.slots[head];
        if slot.mlp.output_dim() != ACTION_DIM || slot.log_std.len() != ACTION_DIM {
            return Err(Error::Dimension {
                context: "leaf policy output",
                expected: ACTION_DIM,
                got: slot.mlp.output_dim(),
            });
        }
        self.nodes.push(PolicyNode {
            skill: skill.to_string(),
            feature_idx: feature_indices(&groups),
            groups,
            goal_dim,
            kind: NodeKind::Leaf { head },
            static_id: None,
        });
        self.consumed.push(false);
        Ok(self.nodes.len() - 1)
    }

    /// `parents` pairs each parent node with the range its synthetic goal is
    /// scaled to.
    #[allow(clippy::too_many_arguments)]
    pub fn add_composite(
        &mut self,
        skill: &str,
        groups: Vec<FeatureGroup>,
        goal_dim: usize,
        parents: &[(usize, f64)],
        goal_net: Option<usize>,
        weight_net: usize,
        residual: usize,
    ) -> Result<usize> {
        if parents.is_empty() {
            return Err(Error::Contract(format!("composite `{skill}` has no parents")));
        }
        // Each node keeps its own forward trace, so a skill reached along two
        // paths needs two nodes (sharing slots).
        for &(node, _) in parents {
            if node >= self.nodes.len() || self.consumed[node] {
                return Err(Error::Contract(format!(
                    "composite `{skill}`: parent node {node} is missing or already consumed"
                )));
            }
        }
        let mut links = Vec::with_capacity(parents.len());
        let mut offset = 0;
        for &(node, goal_range) in parents {
            let gd = self.nodes[node].goal_dim;
            links.push(ParentLink {
                node,
                goal_offset: offset,
                goal_dim: gd,
                goal_range,
            });
            offset += gd;
        }
        for (slot, what) in [(weight_net, "weight network input"), (residual, "residual input")] {
            self.check_input(slot, &groups, goal_dim, what)?;
        }
        if self.slots[weight_net].mlp.output_dim() != parents.len() + 1 {
            return Err(Error::Dimension {
                context: "weight network arity",
                expected: parents.len() + 1,
                got: self.slots[weight_net].mlp.output_dim(),
            });
        }
        if self.slots[residual].mlp.output_dim() != ACTION_DIM {
            return Err(Error::Dimension {
                context: "residual output",
                expected: ACTION_DIM,
                got: self.slots[residual].mlp.output_dim(),
            });
        }
        match goal_net {
            Some(g) => {
                self.check_input(g, &groups, goal_dim, "goal network input")?;
                if self.slots[g].mlp.output_dim() != offset {
                    return Err(Error::Dimension {
                        context: "goal network output",
                        expected: offset,
                        got: self.slots[g].mlp.output_dim(),
                    });
                }
            }
            None if offset > 0 => {
                return Err(Error::Contract(format!(
                    "composite `{skill}` has goal-conditioned parents but no goal network"
                )))
            }
            None => {}
        }
        self.nodes.push(PolicyNode {
            skill: skill.to_string(),
            feature_idx: feature_indices(&groups),
            groups,
            goal_dim,
            kind: NodeKind::Composite {
                parents: links,
                goal_net,
                weight_net,
                residual,
            },
            static_id: None,
        });
        for &(node, _) in parents {
            self.consumed[node] = true;
        }
        self.consumed.push(false);
        Ok(self.nodes.len() - 1)
    }

    pub fn finish(mut self, root: usize) -> PolicyTree {
        let n = self.nodes.len();
        let mut has_trainable = vec![false; n];
        // Parents are always added before their consumers, so a forward scan
        // sees every parent first.
        for i in 0..n {
            let t = match &self.nodes[i].kind {
                NodeKind::Leaf { head } => self.slots[*head].trainable,
                NodeKind::Composite {
                    parents,
                    goal_net,
                    weight_net,
                    residual,
                } => {
                    parents.iter().any(|p| has_trainable[p.node])
                        || goal_net.is_some_and(|g| self.slots[g].trainable)
                        || self.slots[*weight_net].trainable
                        || self.slots[*residual].trainable
                }
            };
            has_trainable[i] = t;
        }
        let mut static_ids: BTreeMap<String, usize> = BTreeMap::new();
        for i in 0..n {
            if !has_trainable[i] && self.nodes[i].goal_dim == 0 {
                let next = static_ids.len();
                let id = *static_ids.entry(self.nodes[i].skill.clone()).or_insert(next);
                self.nodes[i].static_id = Some(id);
            }
        }
        // Frontier: static nodes read directly by a non-static consumer.
        let mut frontier = Vec::new();
        let mut seen = vec![false; static_ids.len()];
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            if let Some(id) = self.nodes[i].static_id {
                if !seen[id] {
                    seen[id] = true;
                    frontier.push(id);
                }
                continue;
            }
            if let NodeKind::Composite { parents, .. } = &self.nodes[i].kind {
                for p in parents.iter().rev() {
                    stack.push(p.node);
                }
            }
        }
        let frozen = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.trainable)
            .map(|(i, s)| (i, s.checksum()))
            .collect();
        PolicyTree {
            slots: self.slots,
            nodes: self.nodes,
            root,
            static_count: static_ids.len(),
            frontier,
            frozen,
        }
    }
}

fn leak_context(what: &str) -> &'static str {
    match what {
        "leaf policy input" => "leaf policy input",
        "weight network input" => "weight network input",
        "residual input" => "residual input",
        "goal network input" => "goal network input",
        _ => "network input",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTree {
    slots: Vec<NetSlot>,
    nodes: Vec<PolicyNode>,
    root: usize,
    static_count: usize,
    frontier: Vec<usize>,
    frozen: Vec<(usize, u64)>,
}

/// Per-node scratch for one forward/backward pass.
#[derive(Debug, Clone, Default)]
struct NodeTrace {
    obs: Vec<f64>,
    head: ForwardCache,
    weight: ForwardCache,
    goal: ForwardCache,
    goal_raw: Vec<f64>,
    synth: Vec<f64>,
    raw_weights: Vec<f64>,
    weights: Vec<f64>,
    prims: Vec<GaussianPolicyOutput>,
    raw_std: Vec<f64>,
    output: GaussianPolicyOutput,
    d_out_mean: Vec<f64>,
    d_out_std: Vec<f64>,
    d_goal: Vec<f64>,
    compose: ComposeGrads,
}

/// Reusable buffers for evaluating and differentiating a [`PolicyTree`].
#[derive(Debug, Clone, Default)]
pub struct TreeWorkspace {
    traces: Vec<NodeTrace>,
    memo: Vec<Option<GaussianPolicyOutput>>,
    d_obs: Vec<f64>,
    d_obs2: Vec<f64>,
    scratch: Vec<f64>,
    forward_done: bool,
}

/// Gradient accumulators, one per slot (empty for frozen slots).
#[derive(Debug, Clone)]
pub struct TreeGrads {
    pub params: Vec<Vec<f64>>,
    pub log_std: Vec<Vec<f64>>,
}

impl TreeGrads {
    pub fn zero(&mut self) {
        for v in self.params.iter_mut().chain(self.log_std.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.params.iter_mut().chain(self.log_std.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.params
            .iter()
            .chain(self.log_std.iter())
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (p, l) in self.params.iter().zip(&self.log_std) {
            out.extend_from_slice(p);
            out.extend_from_slice(l);
        }
        out
    }
}

/// Extra gradients on the top node's own residual, for penalties defined
/// directly on the residual weight and residual mean.
#[derive(Debug, Clone, Default)]
pub struct ResidualInjection {
    pub d_weight: f64,
    pub d_mean: Vec<f64>,
}

/// Diagnostics of one action decision of the top node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDiagnostics {
    /// Composition weights, parents in declaration order then residual.
    pub weights: Vec<f64>,
    pub residual_mean: Vec<f64>,
    /// L1 norm of the residual mean.
    pub residual_l1: f64,
    /// Synthetic goal per parent (empty for goal-less parents).
    pub synthetic_goals: Vec<Vec<f64>>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Mean,
}

impl PolicyTree {
    pub fn root(&self) -> &PolicyNode {
        &self.nodes[self.root]
    }

    pub fn nodes(&self) -> &[PolicyNode] {
        &self.nodes
    }

    pub fn slots(&self) -> &[NetSlot] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [NetSlot] {
        &mut self.slots
    }

    pub fn is_composite(&self) -> bool {
        matches!(self.root().kind, NodeKind::Composite { .. })
    }

    /// Observation width of the top node (features plus task goal).
    pub fn input_dim(&self) -> usize {
        self.root().input_dim()
    }

    pub fn goal_dim(&self) -> usize {
        self.root().goal_dim
    }

    pub fn parent_count(&self) -> usize {
        match &self.root().kind {
            NodeKind::Leaf { .. } => 0,
            NodeKind::Composite { parents, .. } => parents.len(),
        }
    }

    pub fn parent_skills(&self) -> Vec<String> {
        match &self.root().kind {
            NodeKind::Leaf { .. } => Vec::new(),
            NodeKind::Composite { parents, .. } => {
                parents.iter().map(|p| self.nodes[p.node].skill.clone()).collect()
            }
        }
    }

    /// Number of static outputs a rollout sample must carry.
    pub fn frontier_len(&self) -> usize {
        self.frontier.len()
    }

    pub fn total_params(&self) -> usize {
        self.slots.iter().map(NetSlot::param_count).sum()
    }

    pub fn learnable_params(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.trainable)
            .map(NetSlot::param_count)
            .sum()
    }

    pub fn trainable_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.trainable)
            .map(|(i, _)| i)
    }

    /// Checksums of frozen slots recorded when the tree was built.
    pub fn frozen_checksums(&self) -> Vec<(String, u64)> {
        self.frozen
            .iter()
            .map(|&(i, c)| (self.slots[i].name(), c))
            .collect()
    }

    /// Recomputes every frozen slot checksum and compares with the value
    /// recorded at assembly.
    pub fn verify_frozen(&self) -> Result<()> {
        for &(i, recorded) in &self.frozen {
            let now = self.slots[i].checksum();
            if now != recorded {
                return Err(Error::Invariant(format!(
                    "frozen network {} changed: {recorded:016x} -> {now:016x}",
                    self.slots[i].name()
                )));
            }
        }
        Ok(())
    }

    pub fn workspace(&self) -> TreeWorkspace {
        TreeWorkspace {
            traces: vec![NodeTrace::default(); self.nodes.len()],
            memo: vec![None; self.static_count],
            ..Default::default()
        }
    }

    pub fn grads(&self) -> TreeGrads {
        TreeGrads {
            params: self
                .slots
                .iter()
                .map(|s| if s.trainable { vec![0.0; s.mlp.param_count()] } else { Vec::new() })
                .collect(),
            log_std: self
                .slots
                .iter()
                .map(|s| if s.trainable { vec![0.0; s.log_std.len()] } else { Vec::new() })
                .collect(),
        }
    }

    /// Writes the observation of the top node into `out`.
    pub fn observation(&self, features: &Features, goal: &[f64], out: &mut Vec<f64>) {
        build_obs(&self.nodes[self.root], features, goal, out);
    }

    /// Evaluates the tree. `preload` may carry the frontier static outputs
    /// (as written by [`PolicyTree::export_static`]) to skip recomputing them.
    pub fn forward<'w>(
        &self,
        features: &Features,
        goal: &[f64],
        ws: &'w mut TreeWorkspace,
        preload: Option<&[f64]>,
    ) -> Result<&'w GaussianPolicyOutput> {
        if goal.len() != self.root().goal_dim {
            return Err(Error::Dimension {
                context: "task goal",
                expected: self.root().goal_dim,
                got: goal.len(),
            });
        }
        if ws.traces.len() != self.nodes.len() {
            *ws = self.workspace();
        }
        ws.memo.iter_mut().for_each(|m| *m = None);
        if let Some(pre) = preload {
            let stride = 2 * ACTION_DIM;
            if pre.len() != stride * self.frontier.len() {
                return Err(Error::Dimension {
                    context: "static preload",
                    expected: stride * self.frontier.len(),
                    got: pre.len(),
                });
            }
            for (k, &id) in self.frontier.iter().enumerate() {
                let chunk = &pre[k * stride..(k + 1) * stride];
                ws.memo[id] = Some(GaussianPolicyOutput {
                    mean: chunk[..ACTION_DIM].to_vec(),
                    std: chunk[ACTION_DIM..].to_vec(),
                });
            }
        }
        self.eval(self.root, features, goal, ws)?;
        ws.forward_done = true;
        Ok(&ws.traces[self.root].output)
    }

    /// Frontier static outputs from the last forward pass, flattened as
    /// `(mean, std)` per frontier node.
    pub fn export_static(&self, ws: &TreeWorkspace, out: &mut Vec<f64>) {
        out.clear();
        for &id in &self.frontier {
            let g = ws.memo[id].as_ref().expect("forward evaluated every frontier node");
            out.extend_from_slice(&g.mean);
            out.extend_from_slice(&g.std);
        }
    }

    fn eval(&self, idx: usize, features: &Features, goal: &[f64], ws: &mut TreeWorkspace) -> Result<()> {
        let node = &self.nodes[idx];
        if let Some(id) = node.static_id {
            if let Some(out) = &ws.memo[id] {
                ws.traces[idx].output.clone_from(out);
                return Ok(());
            }
        }
        match &node.kind {
            NodeKind::Leaf { head } => {
                let slot = &self.slots[*head];
                let t = &mut ws.traces[idx];
                build_obs(node, features, goal, &mut t.obs);
                let mean = slot.mlp.forward(&t.obs, &mut t.head)?;
                t.output.mean.clear();
                t.output.mean.extend_from_slice(mean);
                t.raw_std.clear();
                t.raw_std.extend(slot.log_std.iter().map(|l| l.exp()));
                t.output.std.clear();
                t.output.std.extend(t.raw_std.iter().map(|&s| clamp_std(s).0));
            }
            NodeKind::Composite {
                parents,
                goal_net,
                weight_net,
                residual,
            } => {
                {
                    let t = &mut ws.traces[idx];
                    build_obs(node, features, goal, &mut t.obs);
                    t.synth.clear();
                    if let Some(g) = goal_net {
                        let raw = self.slots[*g].mlp.forward(&t.obs, &mut t.goal)?;
                        t.goal_raw.clear();
                        t.goal_raw.extend_from_slice(raw);
                        t.synth.resize(raw.len(), 0.0);
                        for p in parents {
                            let r = p.goal_offset..p.goal_offset + p.goal_dim;
                            bound_goal(&t.goal_raw[r.clone()], p.goal_range, &mut t.synth[r]);
                        }
                    }
                }
                for p in parents {
                    let r = p.goal_offset..p.goal_offset + p.goal_dim;
                    let g = std::mem::take(&mut ws.traces[idx].synth);
                    let res = self.eval(p.node, features, &g[r], ws);
                    ws.traces[idx].synth = g;
                    res?;
                }
                let (before, rest) = ws.traces.split_at_mut(idx);
                let (t, after) = rest.split_first_mut().expect("idx in range");
                t.prims.resize_with(parents.len() + 1, || GaussianPolicyOutput {
                    mean: vec![0.0; ACTION_DIM],
                    std: vec![1.0; ACTION_DIM],
                });
                for (k, p) in parents.iter().enumerate() {
                    let src = if p.node < idx {
                        &before[p.node].output
                    } else {
                        &after[p.node - idx - 1].output
                    };
                    t.prims[k].clone_from(src);
                }
                let res_slot = &self.slots[*residual];
                let mean = res_slot.mlp.forward(&t.obs, &mut t.head)?;
                let r = parents.len();
                t.prims[r].mean.clear();
                t.prims[r].mean.extend_from_slice(mean);
                t.raw_std.clear();
                t.raw_std.extend(res_slot.log_std.iter().map(|l| l.exp()));
                t.prims[r].std.clear();
                t.prims[r].std.extend(t.raw_std.iter().map(|&s| clamp_std(s).0));

                let raw = self.slots[*weight_net].mlp.forward(&t.obs, &mut t.weight)?;
                t.raw_weights.clear();
                t.raw_weights.extend_from_slice(raw);
                t.weights = squash_weights(&t.raw_weights).values;
                let refs: Vec<&GaussianPolicyOutput> = t.prims.iter().collect();
                t.output = compose_mcp(&refs, &t.weights);
            }
        }
        if let Some(id) = node.static_id {
            ws.memo[id] = Some(ws.traces[idx].output.clone());
        }
        Ok(())
    }

    /// Backpropagates dL/d(mean) and dL/d(std) of the top output (plus any
    /// direct residual penalties) into `grads` for every trainable slot.
    pub fn backward(
        &self,
        ws: &mut TreeWorkspace,
        d_mean: &[f64],
        d_std: &[f64],
        injection: Option<&ResidualInjection>,
        grads: &mut TreeGrads,
    ) -> Result<()> {
        if !ws.forward_done {
            return Err(Error::Contract("tree backward without forward".into()));
        }
        let t = &mut ws.traces[self.root];
        t.d_out_mean.clear();
        t.d_out_mean.extend_from_slice(d_mean);
        t.d_out_std.clear();
        t.d_out_std.extend_from_slice(d_std);
        self.back(self.root, ws, injection, grads, false)
    }

    fn back(
        &self,
        idx: usize,
        ws: &mut TreeWorkspace,
        injection: Option<&ResidualInjection>,
        grads: &mut TreeGrads,
        need_goal_grad: bool,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        if node.static_id.is_some() {
            return Ok(());
        }
        let n_feat = node.feature_idx.len();
        let want_input = need_goal_grad && node.goal_dim > 0;
        match &node.kind {
            NodeKind::Leaf { head } => {
                let slot = &self.slots[*head];
                let t = &mut ws.traces[idx];
                ws.d_obs.resize(node.input_dim(), 0.0);
                let pg = if slot.trainable {
                    Some(grads.params[*head].as_mut_slice())
                } else {
                    None
                };
                if pg.is_none() && !want_input {
                    return Ok(());
                }
                slot.mlp.backward(
                    &mut t.head,
                    &t.d_out_mean,
                    pg,
                    if want_input { Some(&mut ws.d_obs) } else { None },
                )?;
                if slot.trainable {
                    for d in 0..ACTION_DIM {
                        if !clamp_std(t.raw_std[d]).1 {
                            grads.log_std[*head][d] += t.d_out_std[d] * t.raw_std[d];
                        }
                    }
                }
                t.d_goal.clear();
                if want_input {
                    t.d_goal.extend_from_slice(&ws.d_obs[n_feat..]);
                }
            }
            NodeKind::Composite {
                parents,
                goal_net,
                weight_net,
                residual,
            } => {
                let r = parents.len();
                {
                    let t = &mut ws.traces[idx];
                    let refs: Vec<&GaussianPolicyOutput> = t.prims.iter().collect();
                    compose_mcp_backward(
                        &refs,
                        &t.weights,
                        &t.output,
                        &t.d_out_mean,
                        &t.d_out_std,
                        &mut t.compose,
                    );
                    if let Some(inj) = injection {
                        t.compose.d_weight[r] += inj.d_weight;
                        for (g, d) in t.compose.d_mean[r].iter_mut().zip(&inj.d_mean) {
                            *g += d;
                        }
                    }
                }
                // Parents first: they fill their d_goal which feeds the goal net.
                for (k, p) in parents.iter().enumerate() {
                    if self.nodes[p.node].static_id.is_some() {
                        continue;
                    }
                    let (dm, ds) = {
                        let c = &ws.traces[idx].compose;
                        (c.d_mean[k].clone(), c.d_std[k].clone())
                    };
                    let pt = &mut ws.traces[p.node];
                    pt.d_out_mean = dm;
                    pt.d_out_std = ds;
                    self.back(p.node, ws, None, grads, p.goal_dim > 0)?;
                }

                let in_dim = node.input_dim();
                ws.d_obs.clear();
                ws.d_obs.resize(in_dim, 0.0);
                ws.d_obs2.resize(in_dim, 0.0);

                // Residual primitive.
                let res_slot = &self.slots[*residual];
                {
                    let t = &mut ws.traces[idx];
                    let pg = res_slot.trainable.then(|| grads.params[*residual].as_mut_slice());
                    if pg.is_some() || want_input {
                        res_slot.mlp.backward(
                            &mut t.head,
                            &t.compose.d_mean[r],
                            pg,
                            if want_input { Some(&mut ws.d_obs2) } else { None },
                        )?;
                        if want_input {
                            add_into(&mut ws.d_obs, &ws.d_obs2);
                        }
                    }
                    if res_slot.trainable {
                        for d in 0..ACTION_DIM {
                            if !clamp_std(t.raw_std[d]).1 {
                                grads.log_std[*residual][d] += t.compose.d_std[r][d] * t.raw_std[d];
                            }
                        }
                    }
                }

                // Weight network.
                let w_slot = &self.slots[*weight_net];
                {
                    let t = &mut ws.traces[idx];
                    let pg = w_slot.trainable.then(|| grads.params[*weight_net].as_mut_slice());
                    if pg.is_some() || want_input {
                        ws.scratch.clear();
                        ws.scratch.extend(
                            t.compose
                                .d_weight
                                .iter()
                                .zip(&t.raw_weights)
                                .map(|(d, &raw)| d * squash_weight_grad(raw)),
                        );
                        w_slot.mlp.backward(
                            &mut t.weight,
                            &ws.scratch,
                            pg,
                            if want_input { Some(&mut ws.d_obs2) } else { None },
                        )?;
                        if want_input {
                            add_into(&mut ws.d_obs, &ws.d_obs2);
                        }
                    }
                }

                // Goal synthesis network.
                if let Some(g) = goal_net {
                    let g_slot = &self.slots[*g];
                    ws.scratch.clear();
                    ws.scratch.resize(ws.traces[idx].goal_raw.len(), 0.0);
                    for p in parents {
                        if p.goal_dim == 0 || self.nodes[p.node].static_id.is_some() {
                            continue;
                        }
                        let pd = &ws.traces[p.node].d_goal;
                        let raw = &ws.traces[idx].goal_raw;
                        for j in 0..p.goal_dim {
                            let th = raw[p.goal_offset + j].tanh();
                            ws.scratch[p.goal_offset + j] = pd[j] * p.goal_range * (1.0 - th * th);
                        }
                    }
                    let t = &mut ws.traces[idx];
                    let pg = g_slot.trainable.then(|| grads.params[*g].as_mut_slice());
                    if pg.is_some() || want_input {
                        g_slot.mlp.backward(
                            &mut t.goal,
                            &ws.scratch,
                            pg,
                            if want_input { Some(&mut ws.d_obs2) } else { None },
                        )?;
                        if want_input {
                            add_into(&mut ws.d_obs, &ws.d_obs2);
                        }
                    }
                }

                let t = &mut ws.traces[idx];
                t.d_goal.clear();
                if want_input {
                    t.d_goal.extend_from_slice(&ws.d_obs[n_feat..]);
                }
            }
        }
        Ok(())
    }

    /// Diagnostics of the top node from the last forward pass.
    pub fn diagnostics(&self, ws: &TreeWorkspace, action: &[f64]) -> ActionDiagnostics {
        let t = &ws.traces[self.root];
        let log_prob = t.output.log_prob(action);
        match &self.root().kind {
            NodeKind::Leaf { .. } => ActionDiagnostics {
                weights: Vec::new(),
                residual_mean: Vec::new(),
                residual_l1: 0.0,
                synthetic_goals: Vec::new(),
                log_prob,
            },
            NodeKind::Composite { parents, .. } => {
                let res = &t.prims[parents.len()].mean;
                ActionDiagnostics {
                    weights: t.weights.clone(),
                    residual_mean: res.clone(),
                    residual_l1: res.iter().map(|x| x.abs()).sum(),
                    synthetic_goals: parents
                        .iter()
                        .map(|p| t.synth[p.goal_offset..p.goal_offset + p.goal_dim].to_vec())
                        .collect(),
                    log_prob,
                }
            }
        }
    }

    /// Residual weight and residual mean of the top node from the last forward.
    pub fn residual_state(&self, ws: &TreeWorkspace) -> Option<(f64, Vec<f64>)> {
        match &self.root().kind {
            NodeKind::Leaf { .. } => None,
            NodeKind::Composite { parents, .. } => {
                let t = &ws.traces[self.root];
                Some((t.weights[parents.len()], t.prims[parents.len()].mean.clone()))
            }
        }
    }

    /// Raw weight-network output of the top node for one observation.
    pub fn weights_at(&self, features: &Features, goal: &[f64]) -> Result<Vec<f64>> {
        match &self.root().kind {
            NodeKind::Leaf { .. } => Err(Error::Contract("leaf policy has no weight network".into())),
            NodeKind::Composite { weight_net, .. } => {
                let mut obs = Vec::new();
                build_obs(self.root(), features, goal, &mut obs);
                let raw = self.slots[*weight_net].mlp.predict(&obs)?;
                Ok(squash_weights(&raw).values)
            }
        }
    }

    /// Full action pipeline: goals, parents, residual, weights, composition,
    /// then sample or take the mean.
    pub fn act<R: Rng + ?Sized>(
        &self,
        features: &Features,
        goal: &[f64],
        mode: ActionMode,
        rng: &mut R,
        ws: &mut TreeWorkspace,
    ) -> Result<(Vec<f64>, ActionDiagnostics)> {
        let dist = self.forward(features, goal, ws, None)?.clone();
        let action = match mode {
            ActionMode::Sample => dist.sample(rng),
            ActionMode::Mean => dist.mean.clone(),
        };
        let diag = self.diagnostics(ws, &action);
        Ok((action, diag))
    }
}

/// Free-function form of [`PolicyTree::act`].
pub fn composite_action<R: Rng + ?Sized>(
    policy: &PolicyTree,
    features: &Features,
    task_goal: &[f64],
    mode: ActionMode,
    rng: &mut R,
) -> Result<(Vec<f64>, ActionDiagnostics)> {
    let mut ws = policy.workspace();
    policy.act(features, task_goal, mode, rng, &mut ws)
}

fn build_obs(node: &PolicyNode, features: &Features, goal: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(node.feature_idx.iter().map(|&i| features.0[i]));
    out.extend_from_slice(goal);
}

#[inline]
fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}
