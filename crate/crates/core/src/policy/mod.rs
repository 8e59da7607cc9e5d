//! Gaussian primitives, multiplicative composition and composite policy trees.

pub mod compose;
pub mod gaussian;
pub mod tree;

pub use compose::{
    bound_goal, compose_mcp, compose_mcp_backward, squash_weight_grad, squash_weights, ComposeGrads,
    CompositionWeights, SyntheticGoalSet, synthesize_goals, WEIGHT_FLOOR,
};
pub use gaussian::{
    clamp_std, gaussian_log_prob, log_prob_grad, simple_residual_sum, GaussianPolicyOutput, STD_MAX,
    STD_MIN,
};
pub use tree::{
    composite_action, init_log_std, ActionDiagnostics, ActionMode, NetRole, NetSlot, NodeKind, ParentLink,
    PolicyNode, PolicyTree, ResidualInjection, TreeBuilder, TreeGrads, TreeWorkspace, ACTION_DIM,
};
