//! Gaussian splatting: covariance and projection math, tile rasterizer,
//! brute-force reference renderer and analytic backward pass.

pub mod camera;
pub mod gaussian;
pub mod image;
pub mod math;
pub mod raster;

pub use camera::{camera_at_azimuth, camera_circle, Camera, Intrinsics};
pub use gaussian::{decode_gaussians, encode_gaussians, load_gaussians, save_gaussians, Gaussian3D, GAUSSIAN_PARAMS};
pub use image::Image;
pub use math::{covariance, project, quat_to_rot, screen_cov, Projection, COV_FLOOR};
pub use raster::{brute_force_render, rasterize, rasterize_backward, RenderOutput, ALPHA_MAX, ALPHA_MIN, T_MIN};
