//! Small dense-network stack: ELU MLPs, analytic gradients, Adam, a
//! finite-difference checker and the on-disk parameter format.

pub mod adam;
pub mod blob;
pub mod gradcheck;
pub mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckReport};
pub use mlp::{
    checksum_f64, elu, elu_grad, mlp_forward, sigmoid, ForwardCache, LayerDesc, Mlp, NetworkSpec,
    OutputTransform, ParameterStore,
};
