use super::cloud::PointCloud;
use super::morton::{interleave, Coord};
use crate::{Error, Result};

/// Occupied coordinates for levels `base..=top` plus parent/child index maps.
///
/// Every level is stored in Morton order, so the children of a parent occupy
/// a contiguous run of the next level; `child_start` is the CSR offset table
/// for those runs.
#[derive(Clone, Debug, PartialEq)]
pub struct OctreeHierarchy {
    base: u32,
    levels: Vec<Vec<Coord>>,
    parent_of: Vec<Vec<u32>>,
    child_start: Vec<Vec<u32>>,
}

impl OctreeHierarchy {
    /// Builds levels `base..=top` by repeated floor-halving of `top_coords`,
    /// which must already be unique and Morton sorted.
    pub fn from_top(top_coords: Vec<Coord>, top: u32, base: u32) -> Result<Self> {
        if base > top {
            return Err(Error::Config(format!(
                "base level {base} exceeds top level {top}"
            )));
        }
        if top_coords.is_empty() {
            return Err(Error::Config("cannot build a hierarchy from no points".into()));
        }
        for w in top_coords.windows(2) {
            if interleave(w[0]) >= interleave(w[1]) {
                return Err(Error::Consistency(
                    "top-level coordinates are not strictly Morton increasing".into(),
                ));
            }
        }
        let depth = (top - base + 1) as usize;
        let mut levels = vec![Vec::new(); depth];
        let mut parent_of = vec![Vec::new(); depth];
        let mut child_start = vec![Vec::new(); depth];
        levels[depth - 1] = top_coords;
        for idx in (0..depth - 1).rev() {
            let children = &levels[idx + 1];
            let mut parents: Vec<Coord> = Vec::new();
            let mut pmap = Vec::with_capacity(children.len());
            let mut starts = Vec::new();
            for (ci, c) in children.iter().enumerate() {
                let p = [c[0] >> 1, c[1] >> 1, c[2] >> 1];
                if parents.last() != Some(&p) {
                    parents.push(p);
                    starts.push(ci as u32);
                }
                pmap.push((parents.len() - 1) as u32);
            }
            starts.push(children.len() as u32);
            levels[idx] = parents;
            parent_of[idx + 1] = pmap;
            child_start[idx] = starts;
        }
        Ok(OctreeHierarchy {
            base,
            levels,
            parent_of,
            child_start,
        })
    }

    /// Builds from per-level coordinate sets that were produced elsewhere
    /// (e.g. occupancy decoding); validates the parent/child relation.
    pub fn from_levels(base: u32, levels: Vec<Vec<Coord>>) -> Result<Self> {
        let top = base + levels.len() as u32 - 1;
        let h = Self::from_top(levels.last().cloned().unwrap_or_default(), top, base)?;
        if h.levels != levels {
            return Err(Error::Consistency(
                "level coordinate sets are not consistent floor-halvings".into(),
            ));
        }
        Ok(h)
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn top(&self) -> u32 {
        self.base + self.levels.len() as u32 - 1
    }

    pub fn contains_level(&self, n: u32) -> bool {
        n >= self.base && n <= self.top()
    }

    fn idx(&self, n: u32) -> usize {
        assert!(
            self.contains_level(n),
            "level {n} outside hierarchy {}..={}",
            self.base,
            self.top()
        );
        (n - self.base) as usize
    }

    pub fn coords(&self, n: u32) -> &[Coord] {
        &self.levels[self.idx(n)]
    }

    pub fn len(&self, n: u32) -> usize {
        self.coords(n).len()
    }

    /// For each point at level `n` (> base), the index of its parent at `n-1`.
    pub fn parent_of(&self, n: u32) -> &[u32] {
        assert!(n > self.base, "base level has no parents");
        &self.parent_of[self.idx(n)]
    }

    /// CSR offsets of children at `n+1` for every point at level `n` (< top).
    pub fn child_starts(&self, n: u32) -> &[u32] {
        assert!(n < self.top(), "top level has no children");
        &self.child_start[self.idx(n)]
    }

    /// Child indices (at level `n+1`) of parent `p` at level `n`.
    pub fn children_of(&self, n: u32, p: usize) -> std::ops::Range<usize> {
        let s = self.child_starts(n);
        s[p] as usize..s[p + 1] as usize
    }

    /// Same hierarchy restricted to levels `base..=top` with a higher base.
    pub fn rebased(&self, base: u32) -> Result<Self> {
        if base < self.base || base > self.top() {
            return Err(Error::Config(format!(
                "cannot rebase hierarchy {}..={} to {base}",
                self.base,
                self.top()
            )));
        }
        let skip = (base - self.base) as usize;
        let mut parent_of: Vec<Vec<u32>> = self.parent_of[skip..].to_vec();
        parent_of[0].clear();
        Ok(OctreeHierarchy {
            base,
            levels: self.levels[skip..].to_vec(),
            parent_of,
            child_start: self.child_start[skip..].to_vec(),
        })
    }
}

/// Builds the octree hierarchy of `pc` for levels `base_level..=pc.bit_depth`.
pub fn build_hierarchy(pc: &PointCloud, base_level: u32) -> Result<OctreeHierarchy> {
    if base_level > pc.bit_depth {
        return Err(Error::Config(format!(
            "base level {base_level} exceeds bit depth {}",
            pc.bit_depth
        )));
    }
    OctreeHierarchy::from_top(pc.points.clone(), pc.bit_depth, base_level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand::Rng;
    use std::collections::HashSet;

    fn random_cloud(n: usize, bits: u32, seed: u64) -> PointCloud {
        let mut rng = SeedTree::new(seed).stream("cloud");
        let pts: Vec<Coord> = (0..n)
            .map(|_| {
                [
                    rng.gen_range(0..1 << bits),
                    rng.gen_range(0..1 << bits),
                    rng.gen_range(0..1 << bits),
                ]
            })
            .collect();
        PointCloud::new(pts, vec![[0.5; 3]; n], bits).unwrap()
    }

    #[test]
    fn two_points_share_root() {
        let pc = PointCloud::new(vec![[0, 0, 0], [1, 1, 1]], vec![[0.0; 3]; 2], 1).unwrap();
        let h = build_hierarchy(&pc, 0).unwrap();
        assert_eq!(h.coords(0), &[[0, 0, 0]]);
        assert_eq!(h.parent_of(1), &[0, 0]);
        assert_eq!(h.children_of(0, 0), 0..2);
    }

    #[test]
    fn single_point_every_level_has_one() {
        let pc = PointCloud::new(vec![[1000, 3, 517]], vec![[0.0; 3]], 10).unwrap();
        let h = build_hierarchy(&pc, 7).unwrap();
        for n in 7..=10 {
            assert_eq!(h.len(n), 1);
        }
    }

    #[test]
    fn base_above_depth_is_config_error() {
        let pc = PointCloud::new(vec![[0, 0, 0]], vec![[0.0; 3]], 3).unwrap();
        assert!(matches!(build_hierarchy(&pc, 4), Err(Error::Config(_))));
    }

    #[test]
    fn level_sizes_match_hash_set_oracle() {
        let pc = random_cloud(1000, 6, 3);
        let h = build_hierarchy(&pc, 3).unwrap();
        for n in 3..=6u32 {
            let shift = 6 - n;
            let set: HashSet<Coord> = pc
                .points
                .iter()
                .map(|p| [p[0] >> shift, p[1] >> shift, p[2] >> shift])
                .collect();
            assert_eq!(h.len(n), set.len(), "level {n}");
            assert!(h.coords(n).iter().all(|c| set.contains(c)));
        }
    }

    #[test]
    fn structural_invariants() {
        let pc = random_cloud(700, 7, 11);
        let h = build_hierarchy(&pc, 2).unwrap();
        for n in 3..=7u32 {
            let (lo, hi) = (h.len(n - 1), h.len(n));
            assert!(lo <= hi && hi <= 8 * lo);
            let parents = h.parent_of(n);
            let mut counts = vec![0usize; lo];
            for (ci, &p) in parents.iter().enumerate() {
                let c = h.coords(n)[ci];
                assert_eq!(h.coords(n - 1)[p as usize], [c[0] / 2, c[1] / 2, c[2] / 2]);
                counts[p as usize] += 1;
                assert!(h.children_of(n - 1, p as usize).contains(&ci));
            }
            assert!(counts.iter().all(|&c| (1..=8).contains(&c)));
        }
    }

    #[test]
    fn rebuilding_from_a_level_is_idempotent() {
        let pc = random_cloud(400, 6, 5);
        let h = build_hierarchy(&pc, 2).unwrap();
        let again = OctreeHierarchy::from_top(h.coords(5).to_vec(), 5, 2).unwrap();
        for n in 2..=5 {
            assert_eq!(again.coords(n), h.coords(n));
        }
        let rebased = h.rebased(4).unwrap();
        assert_eq!(rebased.coords(4), h.coords(4));
        assert_eq!(rebased.parent_of(6), h.parent_of(6));
    }
}
