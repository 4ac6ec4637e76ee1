//! Point-cloud ingestion, canonical Morton ordering, the octree hierarchy and
//! feature pooling/upsampling between its levels.

mod cloud;
mod hierarchy;
mod morton;
mod ply;
mod tensor;

pub use cloud::PointCloud;
pub use hierarchy::{build_hierarchy, OctreeHierarchy};
pub use morton::{deinterleave, interleave, morton_cmp, morton_key, Coord, MAX_BITS};
pub use ply::{load_ply, save_ply, PlyFormat};
pub use tensor::{avg_pool_down, hold_rows, pool_rows, upsample_copy, SparseTensor};
