//! Point-cloud instance segmentation by set prediction.
//!
//! The pipeline runs a voxel encoder–decoder over an RGB point cloud, splits
//! the per-point features into a local branch (multi-radius aggregation around
//! foreground keypoints) and a global branch (superpoint average pooling), and
//! refines a fixed set of learnable queries with a transformer decoder whose
//! cross-attention over superpoints is masked by the previous layer's mask
//! prediction. Each query yields a class distribution, an IoU estimate and a
//! superpoint mask; training matches queries to ground truth with the
//! Hungarian algorithm and inference ranks queries without any
//! non-maximum suppression.
//!
//! Everything is plain `f64` on one CPU core, with a small tape-based
//! reverse-mode engine in [`numerics`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod backbone;
pub mod decoder;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod scenegen;
pub mod training;

pub use model::{Decisions, Model, ModelConfig, PreparedScene};
pub use numerics::{Graph, Matrix, NumericsError, ParamStore};

// The guide's code blocks run as doctests of these empty modules.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/decoder.md")]
    mod decoder {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
