//! Dense `f64` matrices, a reverse-mode tape, and the small set of neural
//! layers every learnable block in the pipeline is built from.

mod graph;
mod matrix;
mod nn;
mod params;

pub use graph::{sigmoid, Gradients, Graph, Var, LAYER_NORM_EPS};
pub use matrix::Matrix;
pub use nn::{mlp_forward, Activation, LayerNorm, Linear, Mlp, MlpSpec};
pub use params::{derive_seed, rng_from_seed, ParamId, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("softmax row {0} is entirely -inf")]
    FullyMaskedRow(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
