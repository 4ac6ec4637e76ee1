use super::hierarchy::OctreeHierarchy;
use super::morton::{interleave, Coord};
use crate::mat::Mat;
use crate::{Error, Result};

/// Feature rows attached to the occupied coordinates of one octree level.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor {
    pub level: u32,
    pub coords: Vec<Coord>,
    pub feats: Mat,
}

impl SparseTensor {
    pub fn new(level: u32, coords: Vec<Coord>, feats: Mat) -> Result<Self> {
        if coords.len() != feats.rows() {
            return Err(Error::Dimension(format!(
                "{} coordinates but {} feature rows",
                coords.len(),
                feats.rows()
            )));
        }
        for w in coords.windows(2) {
            if interleave(w[0]) >= interleave(w[1]) {
                return Err(Error::Consistency(
                    "coordinates are not strictly Morton increasing".into(),
                ));
            }
        }
        if !feats.all_finite() {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(SparseTensor {
            level,
            coords,
            feats,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.feats.cols()
    }
}

fn check_level(t: &SparseTensor, hier: &OctreeHierarchy, what: &str) -> Result<()> {
    if !hier.contains_level(t.level) || hier.coords(t.level) != t.coords.as_slice() {
        return Err(Error::Consistency(format!(
            "{what}: tensor at level {} does not match the hierarchy",
            t.level
        )));
    }
    Ok(())
}

/// Mean of each parent's occupied children (divides by the occupied count).
pub fn pool_rows(feats: &Mat, child_starts: &[u32]) -> Mat {
    let parents = child_starts.len() - 1;
    let mut out = Mat::zeros(parents, feats.cols());
    for p in 0..parents {
        let (s, e) = (child_starts[p] as usize, child_starts[p + 1] as usize);
        let dst = out.row_mut(p);
        // Running mean: exact when all children carry the same row.
        dst.copy_from_slice(feats.row(s));
        for (k, c) in (s + 1..e).enumerate() {
            let w = 1.0 / (k + 2) as f64;
            for (d, v) in dst.iter_mut().zip(feats.row(c)) {
                *d += (v - *d) * w;
            }
        }
    }
    out
}

/// Zero-order hold: every child row is a copy of its parent row.
pub fn hold_rows(feats: &Mat, parent_of: &[u32]) -> Mat {
    let mut out = Mat::zeros(parent_of.len(), feats.cols());
    for (c, &p) in parent_of.iter().enumerate() {
        out.row_mut(c).copy_from_slice(feats.row(p as usize));
    }
    out
}

pub fn avg_pool_down(src: &SparseTensor, hier: &OctreeHierarchy) -> Result<SparseTensor> {
    check_level(src, hier, "avg_pool_down")?;
    if src.level == hier.base() {
        return Err(Error::Consistency("cannot pool below the base level".into()));
    }
    let n = src.level - 1;
    Ok(SparseTensor {
        level: n,
        coords: hier.coords(n).to_vec(),
        feats: pool_rows(&src.feats, hier.child_starts(n)),
    })
}

pub fn upsample_copy(src: &SparseTensor, hier: &OctreeHierarchy) -> Result<SparseTensor> {
    check_level(src, hier, "upsample_copy")?;
    if src.level == hier.top() {
        return Err(Error::Consistency("cannot upsample past the top level".into()));
    }
    let n = src.level + 1;
    Ok(SparseTensor {
        level: n,
        coords: hier.coords(n).to_vec(),
        feats: hold_rows(&src.feats, hier.parent_of(n)),
    })
}
