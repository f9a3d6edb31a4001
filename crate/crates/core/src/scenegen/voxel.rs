use std::collections::BTreeMap;

use super::Scene;

/// Occupied cells of a regular grid, ordered by integer coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Voxelization {
    pub coords: Vec<[i64; 3]>,
    /// Cell index of each point.
    pub point_voxel: Vec<usize>,
    /// Member points of each cell, ascending.
    pub members: Vec<Vec<usize>>,
}

impl Voxelization {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Grid cell containing `p`: `floor(p / size)` per axis.
pub fn voxel_coord(p: &[f64; 3], size: f64) -> [i64; 3] {
    p.map(|c| (c / size).floor() as i64)
}

pub fn voxelize(scene: &Scene, voxel_size: f64) -> Voxelization {
    voxelize_positions(&scene.positions, voxel_size)
}

pub fn voxelize_positions(positions: &[[f64; 3]], voxel_size: f64) -> Voxelization {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    let mut cells: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in positions.iter().enumerate() {
        cells.entry(voxel_coord(p, voxel_size)).or_default().push(i);
    }
    let mut point_voxel = vec![0; positions.len()];
    let mut coords = Vec::with_capacity(cells.len());
    let mut members = Vec::with_capacity(cells.len());
    for (v, (c, m)) in cells.into_iter().enumerate() {
        for &i in &m {
            point_voxel[i] = v;
        }
        coords.push(c);
        members.push(m);
    }
    Voxelization {
        coords,
        point_voxel,
        members,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cell() {
        let v = voxelize_positions(&[[0.1, 0.1, 0.1], [0.2, 0.3, 0.4], [0.49, 0.0, 0.2]], 0.5);
        assert_eq!(v.len(), 1);
        assert_eq!(v.members[0], vec![0, 1, 2]);
    }

    #[test]
    fn distinct_cells() {
        let v = voxelize_positions(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 0.5);
        assert_eq!(v.len(), 2);
        assert_ne!(v.point_voxel[0], v.point_voxel[1]);
    }

    #[test]
    fn negative_coordinates_floor() {
        assert_eq!(voxel_coord(&[-0.01, 0.0, 0.99], 0.5), [-1, 0, 1]);
    }

    #[test]
    fn maps_are_consistent() {
        let pts: Vec<[f64; 3]> = (0..50)
            .map(|i| [(i as f64 * 0.37) % 2.0, (i as f64 * 0.11) % 1.0, 0.0])
            .collect();
        let v = voxelize_positions(&pts, 0.3);
        for (vi, m) in v.members.iter().enumerate() {
            for &p in m {
                assert_eq!(v.point_voxel[p], vi);
                assert_eq!(voxel_coord(&pts[p], 0.3), v.coords[vi]);
            }
        }
        assert_eq!(v.members.iter().map(Vec::len).sum::<usize>(), pts.len());
    }
}
