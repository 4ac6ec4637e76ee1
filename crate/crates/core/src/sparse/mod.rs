//! Sparse 3D convolution over occupied voxels.

pub mod blocks;
pub mod conv;
pub mod kernel_map;

pub use blocks::{inception_res_block, res_block, BlockKind, InceptionBlock, InceptionParams, Layer, LayerKind, LevelMaps, ResBlock, ResParams};
pub use conv::{geom_invariant_conv, pointwise_linear, sparse_conv, transposed_conv_gen, ConvParams, GEOM_EPS};
pub use kernel_map::{build_kernel_map, generated_coords, kernel_offsets, KernelMap};
