//! Raw octree occupancy: one byte per occupied node of levels `0..N-1`,
//! breadth-first in Morton order, bit `d` set when child `d` (Morton index
//! of the child offset) is occupied.

use crate::voxel::{Coord, OctreeHierarchy};
use crate::{Error, Result};

fn child_index(c: &Coord) -> u8 {
    ((c[0] & 1) | ((c[1] & 1) << 1) | ((c[2] & 1) << 2)) as u8
}

pub fn encode_geometry(hier: &OctreeHierarchy) -> Result<Vec<u8>> {
    let top = hier.top();
    let full = OctreeHierarchy::from_top(hier.coords(top).to_vec(), top, 0)?;
    let mut out = Vec::new();
    for n in 0..top {
        let kids = full.coords(n + 1);
        for p in 0..full.len(n) {
            let mut byte = 0u8;
            for c in &kids[full.children_of(n, p)] {
                byte |= 1 << child_index(c);
            }
            out.push(byte);
        }
    }
    Ok(out)
}

/// Rebuilds the hierarchy for levels `base..=depth` from occupancy bytes.
pub fn decode_geometry(bytes: &[u8], depth: u32, base: u32) -> Result<OctreeHierarchy> {
    let mut level: Vec<Coord> = vec![[0, 0, 0]];
    let mut pos = 0;
    for n in 0..depth {
        let end = pos + level.len();
        if end > bytes.len() {
            return Err(Error::Truncated("geometry".into()));
        }
        let mut next = Vec::with_capacity(level.len() * 2);
        for (p, &byte) in level.iter().zip(&bytes[pos..end]) {
            if byte == 0 {
                return Err(Error::Format(format!("empty occupancy byte at level {n}")));
            }
            for d in 0..8u32 {
                if byte & (1 << d) != 0 {
                    next.push([2 * p[0] + (d & 1), 2 * p[1] + ((d >> 1) & 1), 2 * p[2] + (d >> 2)]);
                }
            }
        }
        pos = end;
        level = next;
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing geometry bytes",
            bytes.len() - pos
        )));
    }
    OctreeHierarchy::from_top(level, depth, base)
}
