//! Synthetic indoor scenes, their voxel and superpoint structure, and ASCII
//! PLY I/O.
//!
//! A scene is a floor plane with a handful of primitives standing on it. The
//! primitive kind doubles as the semantic class; the floor is background and
//! carries instance id `-1`.

mod generate;
mod ply;
mod superpoint;
mod voxel;

pub use generate::{generate_scene, SceneSpec};
pub use ply::{read_ply, read_ply_from, write_ply, write_ply_to, PlyError};
pub use superpoint::{build_superpoints, gt_superpoint_masks, SuperpointPartition};
pub use voxel::{voxel_coord, voxelize, voxelize_positions, Voxelization};

/// Instance id of background points.
pub const BACKGROUND: i32 = -1;

/// Minimum number of points carried by any instance.
pub const MIN_INSTANCE_POINTS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("could not place object {object} after {attempts} attempts")]
    Placement { object: usize, attempts: usize },
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// Point cloud with per-point ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// Metres.
    pub positions: Vec<[f64; 3]>,
    /// RGB in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
    /// Class id in `[0, n_class)` for instance points, `-1` for background.
    pub semantic: Vec<i32>,
    /// Instance id, contiguous from 0; `-1` for background.
    pub instance: Vec<i32>,
    pub n_class: usize,
}

/// Ground-truth instances at point and superpoint granularity.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub instance_classes: Vec<usize>,
    pub point_masks: Vec<Vec<bool>>,
    pub superpoint_masks: Vec<Vec<bool>>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.instance_classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_classes.is_empty()
    }
}

impl Scene {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn n_instances(&self) -> usize {
        self.instance
            .iter()
            .copied()
            .max()
            .map_or(0, |m| (m + 1).max(0) as usize)
    }

    /// Checks the structural invariants of a labelled scene.
    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.positions.len();
        if n == 0 {
            return Err(SceneError::Invalid("scene has no points".into()));
        }
        if self.colors.len() != n || self.semantic.len() != n || self.instance.len() != n {
            return Err(SceneError::Invalid("per-point arrays differ in length".into()));
        }
        let k = self.n_instances();
        let mut counts = vec![0usize; k];
        let mut classes = vec![None; k];
        for i in 0..n {
            let (inst, sem) = (self.instance[i], self.semantic[i]);
            if inst < BACKGROUND {
                return Err(SceneError::Invalid(format!("point {i} has instance id {inst}")));
            }
            if inst == BACKGROUND {
                continue;
            }
            if sem < 0 || sem as usize >= self.n_class {
                return Err(SceneError::Invalid(format!(
                    "point {i} has class {sem} outside [0, {})",
                    self.n_class
                )));
            }
            let inst = inst as usize;
            counts[inst] += 1;
            match classes[inst] {
                None => classes[inst] = Some(sem),
                Some(c) if c != sem => {
                    return Err(SceneError::Invalid(format!(
                        "instance {inst} mixes classes {c} and {sem}"
                    )))
                }
                _ => {}
            }
        }
        for (inst, c) in counts.iter().enumerate() {
            if *c < MIN_INSTANCE_POINTS {
                return Err(SceneError::Invalid(format!("instance {inst} has only {c} points")));
            }
        }
        if self.colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(SceneError::Invalid("colour outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Foreground flag per point.
    pub fn foreground(&self) -> Vec<bool> {
        self.instance.iter().map(|&i| i != BACKGROUND).collect()
    }

    /// Ground truth for a given superpoint partition of this scene.
    pub fn ground_truth(&self, partition: &SuperpointPartition) -> GroundTruth {
        let k = self.n_instances();
        let mut instance_classes = vec![0usize; k];
        let mut point_masks = vec![vec![false; self.len()]; k];
        for (i, &inst) in self.instance.iter().enumerate() {
            if inst >= 0 {
                instance_classes[inst as usize] = self.semantic[i] as usize;
                point_masks[inst as usize][i] = true;
            }
        }
        let superpoint_masks = gt_superpoint_masks(partition, &point_masks);
        GroundTruth {
            instance_classes,
            point_masks,
            superpoint_masks,
        }
    }

    /// Reorders points: output point `i` is input point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Scene {
        Scene {
            positions: order.iter().map(|&i| self.positions[i]).collect(),
            colors: order.iter().map(|&i| self.colors[i]).collect(),
            semantic: order.iter().map(|&i| self.semantic[i]).collect(),
            instance: order.iter().map(|&i| self.instance[i]).collect(),
            n_class: self.n_class,
        }
    }
}
