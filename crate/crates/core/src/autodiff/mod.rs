//! Tensor-level reverse-mode differentiation, losses and the optimizer.

pub mod check;
pub mod graph;
pub mod params;

pub use check::{check_gradients, rel_err, GradCheck};
pub use graph::{gaussian_row, rows_to_gaussians, GaussianMapping, Graph, Var, SCALE_MAX_VOXELS, SCALE_MIN};
pub use params::{adam_step, AdamConfig, AdamState, Gradients, ParamId, ParamStore};
