//! Parameter vectors, dense networks and their exact gradients.

mod grad_check;
mod mlp;
mod params;

pub use grad_check::{finite_difference_grad, max_relative_error};
pub use mlp::{
    Activation, Architecture, Batch, Dense, GradientReport, LayerSpec, LossKind, MlpModel,
    Selector, Targets,
};
pub use params::{Layout, LayoutEntry, ParamVector};
