use std::collections::BTreeMap;

use super::morton::{interleave, Coord, MAX_BITS};
use crate::{Error, Result};

/// Colored voxelized point cloud, canonically sorted in Morton order with
/// duplicate voxels merged.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Coord>,
    pub colors: Vec<[f64; 3]>,
    pub bit_depth: u32,
}

impl PointCloud {
    /// Validates, sorts and merges duplicates by averaging their colors.
    pub fn new(points: Vec<Coord>, colors: Vec<[f64; 3]>, bit_depth: u32) -> Result<Self> {
        if bit_depth == 0 || bit_depth > MAX_BITS {
            return Err(Error::Config(format!("unsupported bit depth {bit_depth}")));
        }
        if points.len() != colors.len() {
            return Err(Error::Dimension(format!(
                "{} points but {} colors",
                points.len(),
                colors.len()
            )));
        }
        let limit = 1u64 << bit_depth;
        let mut merged: BTreeMap<u64, ([f64; 3], u32)> = BTreeMap::new();
        for (i, (p, c)) in points.iter().zip(&colors).enumerate() {
            if p.iter().any(|&v| v as u64 >= limit) {
                return Err(Error::Range {
                    index: i,
                    detail: format!("coordinate {p:?} outside [0, {}]", limit - 1),
                });
            }
            if c.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(Error::Range {
                    index: i,
                    detail: format!("color {c:?} outside [0, 1]"),
                });
            }
            let e = merged.entry(interleave(*p)).or_insert(([0.0; 3], 0));
            for k in 0..3 {
                e.0[k] += c[k];
            }
            e.1 += 1;
        }
        let mut out_p = Vec::with_capacity(merged.len());
        let mut out_c = Vec::with_capacity(merged.len());
        for (key, (sum, n)) in merged {
            out_p.push(super::morton::deinterleave(key));
            let n = n as f64;
            out_c.push([sum[0] / n, sum[1] / n, sum[2] / n]);
        }
        Ok(PointCloud {
            points: out_p,
            colors: out_c,
            bit_depth,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
