use std::rc::Rc;

use super::Assignment;
use crate::decoder::LayerPrediction;
use crate::numerics::{Graph, Matrix, NumericsError, Var};
use crate::scenegen::GroundTruth;

/// Probabilities entering a logarithm are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Additive smoothing of the soft dice ratio.
pub const DICE_EPS: f64 = 1.0;

/// Weights of the matching cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchWeights {
    pub class: f64,
    pub mask: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self { class: 1.0, mask: 1.0 }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Weighted mean binary cross-entropy.
pub fn weighted_bce(p: &[f64], target: &[bool], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    let sum: f64 = p
        .iter()
        .zip(target)
        .zip(w)
        .map(|((&p, &t), &w)| {
            let p = clamp_prob(p);
            -w * if t { p.ln() } else { (1.0 - p).ln() }
        })
        .sum();
    sum / total
}

/// `1 - (2 Σ w p g + eps) / (Σ w p + Σ w g + eps)`.
pub fn weighted_dice(p: &[f64], target: &[bool], w: &[f64], eps: f64) -> f64 {
    let mut inter = 0.0;
    let mut ps = 0.0;
    let mut gs = 0.0;
    for ((&p, &t), &w) in p.iter().zip(target).zip(w) {
        ps += w * p;
        if t {
            inter += w * p;
            gs += w;
        }
    }
    1.0 - (2.0 * inter + eps) / (ps + gs + eps)
}

/// Weighted IoU of two binary masks; 0 when both are empty.
pub fn weighted_iou(a: &[bool], b: &[bool], w: &[f64]) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for ((&x, &y), &w) in a.iter().zip(b).zip(w) {
        if x && y {
            inter += w;
        }
        if x || y {
            union += w;
        }
    }
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `K x K_gt` cost: `class * -ln p[class_k] + mask * (bce + dice)`, with
/// superpoints weighted by their point counts.
pub fn match_cost(pred: &LayerPrediction, gt: &GroundTruth, weights: &[f64], mw: &MatchWeights) -> Matrix {
    let k = pred.queries();
    let mut cost = Matrix::zeros(k, gt.len());
    for i in 0..k {
        let mask = pred.sp_mask.row(i);
        for (j, (&class, target)) in gt.instance_classes.iter().zip(&gt.superpoint_masks).enumerate() {
            let cls = -clamp_prob(pred.class_probs.get(i, class)).ln();
            let m = weighted_bce(mask, target, weights) + weighted_dice(mask, target, weights, DICE_EPS);
            cost.set(i, j, mw.class * cls + mw.mask * m);
        }
    }
    cost
}

/// Matching of one layer plus the detached IoU targets of its matched queries.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMatch {
    pub assignment: Assignment,
    /// Weighted IoU of `mask > 0.5` against the matched gt, per pair.
    pub iou_targets: Vec<f64>,
}

pub fn match_layer(pred: &LayerPrediction, gt: &GroundTruth, weights: &[f64], mw: &MatchWeights) -> LayerMatch {
    let assignment = super::hungarian(&match_cost(pred, gt, weights, mw));
    let iou_targets = assignment
        .pairs
        .iter()
        .map(|&(q, k)| {
            let binary: Vec<bool> = pred.sp_mask.row(q).iter().map(|&p| p > 0.5).collect();
            weighted_iou(&binary, &gt.superpoint_masks[k], weights)
        })
        .collect();
    LayerMatch {
        assignment,
        iou_targets,
    }
}

/// Mean cross-entropy over all queries; `targets[i]` indexes a logit column.
pub fn classification_loss(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
    let k = g.value(logits).rows();
    if targets.len() != k {
        return Err(NumericsError::Shape(format!(
            "{} targets for {k} queries",
            targets.len()
        )));
    }
    let logp = g.log_softmax_rows(logits);
    let picked = g.pick_entries(logp, Rc::new(targets.iter().copied().enumerate().collect()))?;
    let sum = g.sum_all(picked);
    Ok(g.scale(sum, -1.0 / k as f64))
}

/// Classification targets: matched gt class, or the last ("no instance") column.
pub fn class_targets(queries: usize, no_instance: usize, assignment: &Assignment, gt: &GroundTruth) -> Vec<usize> {
    assignment
        .gt_of(queries)
        .into_iter()
        .map(|m| m.map_or(no_instance, |k| gt.instance_classes[k]))
        .collect()
}

/// Mean squared error between matched scores (`K x 1`) and their targets; 0 without pairs.
pub fn score_loss(g: &mut Graph, score: Var, pairs: &[(usize, usize)], targets: &[f64]) -> Result<Var, NumericsError> {
    if pairs.is_empty() {
        return Ok(g.constant(Matrix::scalar(0.0)));
    }
    let picked = g.gather_rows(score, Rc::new(pairs.iter().map(|p| p.0).collect()))?;
    let t = g.constant(Matrix::column_vector(targets));
    let diff = g.sub(picked, t)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean_all(sq))
}

fn matched_rows(
    g: &mut Graph,
    mask: Var,
    pairs: &[(usize, usize)],
    gt_masks: &[Vec<bool>],
) -> Result<(Var, Matrix), NumericsError> {
    let m = g.value(mask).cols();
    let rows = g.gather_rows(mask, Rc::new(pairs.iter().map(|p| p.0).collect()))?;
    let mut target = Matrix::zeros(pairs.len(), m);
    for (r, &(_, k)) in pairs.iter().enumerate() {
        if gt_masks[k].len() != m {
            return Err(NumericsError::Shape(format!(
                "gt mask has {} entries, prediction {m}",
                gt_masks[k].len()
            )));
        }
        for (o, &t) in target.row_mut(r).iter_mut().zip(&gt_masks[k]) {
            *o = if t { 1.0 } else { 0.0 };
        }
    }
    Ok((rows, target))
}

/// Binary cross-entropy of clamped `p` against `target`, each entry scaled
/// by `scale` and summed.
fn scaled_bce(g: &mut Graph, p: Var, target: &Matrix, scale: &Matrix) -> Result<Var, NumericsError> {
    let pc = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = g.ln(pc);
    let neg = g.scale(pc, -1.0);
    let q = g.add_scalar(neg, 1.0);
    let lq = g.ln(q);
    let pos_w: Vec<f64> = target.data().iter().zip(scale.data()).map(|(t, s)| t * s).collect();
    let neg_w: Vec<f64> = target
        .data()
        .iter()
        .zip(scale.data())
        .map(|(t, s)| (1.0 - t) * s)
        .collect();
    let (r, c) = target.shape();
    let a = g.mul_const(lp, Rc::new(Matrix::new(r, c, pos_w)?))?;
    let b = g.mul_const(lq, Rc::new(Matrix::new(r, c, neg_w)?))?;
    let both = g.add(a, b)?;
    let sum = g.sum_all(both);
    Ok(g.scale(sum, -1.0))
}

/// Mean over pairs of the point-count-weighted BCE between mask rows and gt.
pub fn bce_mask_loss(
    g: &mut Graph,
    mask: Var,
    pairs: &[(usize, usize)],
    gt_masks: &[Vec<bool>],
    weights: &[f64],
) -> Result<Var, NumericsError> {
    if pairs.is_empty() {
        return Ok(g.constant(Matrix::scalar(0.0)));
    }
    let (rows, target) = matched_rows(g, mask, pairs, gt_masks)?;
    let total: f64 = weights.iter().sum();
    let per_row: Vec<f64> = weights.iter().map(|w| w / (total * pairs.len() as f64)).collect();
    let scale = Matrix::new(
        pairs.len(),
        weights.len(),
        per_row
            .iter()
            .copied()
            .cycle()
            .take(pairs.len() * weights.len())
            .collect(),
    )?;
    scaled_bce(g, rows, &target, &scale)
}

/// Mean over pairs of the weighted soft dice loss with smoothing `eps`.
pub fn dice_loss(
    g: &mut Graph,
    mask: Var,
    pairs: &[(usize, usize)],
    gt_masks: &[Vec<bool>],
    weights: &[f64],
    eps: f64,
) -> Result<Var, NumericsError> {
    if pairs.is_empty() {
        return Ok(g.constant(Matrix::scalar(0.0)));
    }
    let (rows, target) = matched_rows(g, mask, pairs, gt_masks)?;
    let w = g.constant(Matrix::column_vector(weights));
    let hits = g.mul_const(rows, Rc::new(target.clone()))?;
    let inter = g.matmul(hits, w)?;
    let psum = g.matmul(rows, w)?;
    let gsum: Vec<f64> = target
        .iter_rows()
        .map(|t| t.iter().zip(weights).map(|(t, w)| t * w).sum::<f64>() + eps)
        .collect();
    let gsum = g.constant(Matrix::column_vector(&gsum));
    let num = g.scale(inter, 2.0);
    let num = g.add_scalar(num, eps);
    let den = g.add(psum, gsum)?;
    let ratio = g.div(num, den)?;
    let mean = g.mean_all(ratio);
    let neg = g.scale(mean, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Mean BCE of per-point foreground probabilities (`N x 1`) against labels.
pub fn foreground_loss(g: &mut Graph, f: Var, labels: &[bool]) -> Result<Var, NumericsError> {
    let n = labels.len();
    if g.value(f).shape() != (n, 1) {
        return Err(NumericsError::Shape(format!(
            "foreground scores are {:?}, expected {n}x1",
            g.value(f).shape()
        )));
    }
    let target = Matrix::column_vector(&labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    scaled_bce(g, f, &target, &Matrix::filled(n, 1, 1.0 / n as f64))
}
