//! Scalable learned color compression for voxelized point clouds that
//! decodes straight to renderable 3D Gaussians.

pub mod autodiff;
pub mod cli;
pub mod entropy;
mod error;
pub mod mat;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod sparse;
pub mod splat;
pub mod synth;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};
pub use mat::Mat;
pub use rng::SeedTree;
