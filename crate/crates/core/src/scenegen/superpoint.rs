use super::{voxelize, Scene};

/// Disjoint grouping of points into superpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpointPartition {
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl SuperpointPartition {
    /// Builds a partition from per-point ids, which must cover `0..M` without gaps.
    pub fn from_assignment(assignment: Vec<usize>) -> Self {
        let m = assignment.iter().copied().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0; m];
        for &s in &assignment {
            sizes[s] += 1;
        }
        debug_assert!(sizes.iter().all(|&s| s > 0), "superpoint ids must be contiguous");
        Self { assignment, sizes }
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Member points of each superpoint, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (p, &s) in self.assignment.iter().enumerate() {
            out[s].push(p);
        }
        out
    }

    /// Point counts as floating-point weights.
    pub fn weights(&self) -> Vec<f64> {
        self.sizes.iter().map(|&s| s as f64).collect()
    }

    /// Expands a per-superpoint flag to every member point.
    pub fn propagate(&self, sp_mask: &[bool]) -> Vec<bool> {
        self.assignment.iter().map(|&s| sp_mask[s]).collect()
    }
}

/// One superpoint per occupied cell of a coarse grid.
pub fn build_superpoints(scene: &Scene, coarse_size: f64) -> SuperpointPartition {
    let v = voxelize(scene, coarse_size);
    SuperpointPartition {
        sizes: v.members.iter().map(Vec::len).collect(),
        assignment: v.point_voxel,
    }
}

/// Superpoint `s` belongs to instance `k` iff strictly more than half of its
/// points carry instance `k`.
pub fn gt_superpoint_masks(partition: &SuperpointPartition, point_masks: &[Vec<bool>]) -> Vec<Vec<bool>> {
    point_masks
        .iter()
        .map(|mask| {
            let mut inside = vec![0usize; partition.len()];
            for (p, &s) in partition.assignment.iter().enumerate() {
                if mask[p] {
                    inside[s] += 1;
                }
            }
            inside.iter().zip(&partition.sizes).map(|(&k, &n)| 2 * k > n).collect()
        })
        .collect()
}
