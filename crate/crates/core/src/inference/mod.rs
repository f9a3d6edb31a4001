//! Ranking the final layer's queries into instances, and scoring instances
//! against ground truth.
//!
//! Every query that predicts a real class with a non-empty mask becomes an
//! instance scored by `cbrt(p * s * ms)`: class probability, predicted IoU and
//! mean mask confidence. Instances are only sorted and truncated; overlapping
//! instances are all kept.

mod dump;
mod eval;

pub use dump::{decode_rle, encode_rle, read_dump, write_dump, DumpError, PredictionDump};
pub use eval::{evaluate, iou_points, EvalReport, PointInstance, AP_THRESHOLDS};

use crate::aggregation::AggregationError;
use crate::decoder::LayerPrediction;
use crate::model::{Model, PreparedScene};
use crate::numerics::ParamStore;
use crate::scenegen::SuperpointPartition;

#[derive(Clone, Debug, PartialEq)]
pub struct InferConfig {
    /// Keep at most this many instances; `None` keeps all.
    pub top_k: Option<usize>,
    /// Drop instances scoring below this.
    pub min_score: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            top_k: None,
            min_score: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceResult {
    pub query: usize,
    pub class: usize,
    pub final_score: f64,
    pub sp_mask: Vec<bool>,
    pub point_mask: Vec<bool>,
}

impl InstanceResult {
    pub fn to_point_instance(&self) -> PointInstance {
        PointInstance {
            class: self.class,
            score: self.final_score,
            mask: self.point_mask.clone(),
        }
    }
}

/// Size-weighted mean of the entries above 0.5; 0 if there are none.
pub fn mask_score(row: &[f64], sizes: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&p, &w) in row.iter().zip(sizes) {
        if p > 0.5 {
            num += w * p;
            den += w;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `cbrt(p * s * ms)`.
pub fn final_score(p: f64, s: f64, ms: f64) -> f64 {
    (p * s * ms).cbrt()
}

/// Instances from one layer's prediction, best first (ties keep query order).
pub fn rank_instances(
    pred: &LayerPrediction,
    partition: &SuperpointPartition,
    cfg: &InferConfig,
) -> Vec<InstanceResult> {
    let sizes = partition.weights();
    let n_class = pred.n_class();
    let mut out = Vec::new();
    for q in 0..pred.queries() {
        let probs = pred.class_probs.row(q);
        let argmax_all = argmax(probs);
        if argmax_all == n_class {
            continue;
        }
        let class = argmax(&probs[..n_class]);
        let row = pred.sp_mask.row(q);
        let sp_mask: Vec<bool> = row.iter().map(|&p| p > 0.5).collect();
        if !sp_mask.iter().any(|&b| b) {
            continue;
        }
        let score = final_score(probs[class], pred.iou_score[q], mask_score(row, &sizes));
        if score < cfg.min_score {
            continue;
        }
        out.push(InstanceResult {
            query: q,
            class,
            final_score: score,
            point_mask: partition.propagate(&sp_mask),
            sp_mask,
        });
    }
    out.sort_by(|a, b| b.final_score.total_cmp(&a.final_score).then(a.query.cmp(&b.query)));
    if let Some(k) = cfg.top_k {
        out.truncate(k);
    }
    out
}

/// Lowest index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Ranked instances from the model's final layer.
pub fn predict(
    model: &Model,
    store: &ParamStore,
    scene: &PreparedScene,
    cfg: &InferConfig,
) -> Result<Vec<InstanceResult>, AggregationError> {
    let layers = model.predict_layers(store, scene)?;
    let last = layers.last().expect("decoder always yields a prediction");
    Ok(rank_instances(last, &scene.partition, cfg))
}
