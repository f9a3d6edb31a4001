//! The two feature branches fed to the decoder.
//!
//! The local branch scores every point as foreground, picks keypoints that
//! cover the foreground (see [`iterative_candidate_sample`]), and summarises
//! each keypoint's neighbourhood at two radii. The global branch average-pools
//! point features per superpoint and projects them to the decoder width,
//! alongside the mask-aware features used by the prediction head.

mod global;
mod local;
mod query;
mod sampling;

pub use global::{superpoint_avg_pool, GlobalFeatures, GlobalProjector};
pub use local::{LocalAggregator, LocalFeatures};
pub use query::sphere_query;
pub use sampling::{
    eligible_points, farthest_point_sample, iterative_candidate_sample, CandidateSet, ForegroundScores,
};

use crate::numerics::{derive_seed, rng_from_seed, Graph, Linear, NumericsError, ParamStore, Var};

#[derive(Debug, thiserror::Error)]
pub enum AggregationError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How keypoints for the local branch are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampler {
    /// Foreground filtering with coverage balls.
    Iterative,
    /// Plain farthest point sampling over all points, starting at the most
    /// confident foreground point.
    Fps,
}

impl std::str::FromStr for Sampler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iterative" => Ok(Sampler::Iterative),
            "fps" => Ok(Sampler::Fps),
            other => Err(format!("unknown sampler {other}, expected iterative or fps")),
        }
    }
}

impl std::fmt::Display for Sampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sampler::Iterative => "iterative",
            Sampler::Fps => "fps",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsaConfig {
    pub r1: f64,
    pub r2: f64,
    pub beta: f64,
    pub cap: usize,
    pub rq: f64,
    pub k_cand: usize,
    pub sampler: Sampler,
}

impl Default for MsaConfig {
    fn default() -> Self {
        Self {
            r1: 0.2,
            r2: 0.4,
            beta: 0.3,
            cap: 32,
            rq: 0.3,
            k_cand: 64,
            sampler: Sampler::Iterative,
        }
    }
}

impl MsaConfig {
    /// Keypoints for the local branch given current foreground scores.
    pub fn select_keypoints(
        &self,
        positions: &[[f64; 3]],
        f: &ForegroundScores,
    ) -> Result<Vec<usize>, AggregationError> {
        match self.sampler {
            Sampler::Iterative => {
                Ok(iterative_candidate_sample(positions, f, self.beta, self.k_cand, self.rq)?.indices)
            }
            Sampler::Fps => {
                let Some(start) = f.argmax() else { return Ok(Vec::new()) };
                farthest_point_sample(positions, self.k_cand.min(positions.len()), start)
            }
        }
    }
}

/// Linear layer + sigmoid giving each point's foreground probability.
#[derive(Clone, Debug)]
pub struct ForegroundHead {
    pub linear: Linear,
}

impl ForegroundHead {
    pub fn new(store: &mut ParamStore, in_channels: usize, seed: u64) -> Result<Self, AggregationError> {
        let linear = Linear::new(
            store,
            "msa.foreground",
            in_channels,
            1,
            &mut rng_from_seed(derive_seed(seed, "foreground")),
        )?;
        Ok(Self { linear })
    }

    /// `N x 1` probabilities.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, fp: Var) -> Result<Var, AggregationError> {
        let logits = self.linear.forward(g, store, fp)?;
        Ok(g.sigmoid(logits))
    }
}

/// Foreground probabilities for plain features.
pub fn foreground_scores(
    fp: &crate::numerics::Matrix,
    head: &ForegroundHead,
    store: &ParamStore,
) -> Result<ForegroundScores, AggregationError> {
    let mut g = Graph::new();
    let x = g.constant(fp.clone());
    let f = head.forward(&mut g, store, x)?;
    Ok(ForegroundScores(g.value(f).data().to_vec()))
}
