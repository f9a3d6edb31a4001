//! Matching, losses and the optimisation loop.
//!
//! Each supervised decoder layer is matched to the ground truth with the
//! Hungarian algorithm on a class + mask cost. Matched queries are trained
//! towards their instance's class, mask and mask IoU; unmatched queries are
//! pushed to the "no instance" class. A per-point foreground loss trains the
//! keypoint sampler's scores.

mod hungarian;
mod loss;

use std::io::Write;

pub use hungarian::{hungarian, Assignment};
pub use loss::{
    bce_mask_loss, class_targets, classification_loss, dice_loss, foreground_loss, match_cost, match_layer, score_loss,
    weighted_bce, weighted_dice, weighted_iou, LayerMatch, MatchWeights, DICE_EPS, PROB_CLAMP,
};

use crate::aggregation::AggregationError;
use crate::decoder::{LayerPrediction, PredictionVars};
use crate::model::{Decisions, Model, PreparedScene};
use crate::numerics::{Gradients, Graph, Matrix, NumericsError, ParamStore, Var};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] AggregationError),
    #[error("non-finite {component} at step {step}")]
    NonFinite { step: usize, component: String },
    #[error("{0}")]
    Contract(String),
}

impl From<NumericsError> for TrainError {
    fn from(e: NumericsError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub w_cls: f64,
    pub w_score: f64,
    pub w_bce: f64,
    pub w_dice: f64,
    pub w_foreground: f64,
    pub deep_supervision: bool,
    pub matching: MatchWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 1000,
            w_cls: 0.5,
            w_score: 0.5,
            w_bce: 1.0,
            w_dice: 1.0,
            w_foreground: 1.0,
            deep_supervision: true,
            matching: MatchWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        let weights = [self.w_cls, self.w_score, self.w_bce, self.w_dice, self.w_foreground];
        if weights.iter().any(|w| !(*w >= 0.0)) || !(self.matching.class >= 0.0 && self.matching.mask >= 0.0) {
            return Err(TrainError::Contract(
                "loss and matching weights must be non-negative".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::Contract(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// `w_cls cls + w_score score + w_bce bce + w_dice dice`.
    pub fn combine(&self, cls: f64, score: f64, bce: f64, dice: f64) -> f64 {
        self.w_cls * cls + self.w_score * score + self.w_bce * bce + self.w_dice * dice
    }
}

/// Loss components, averaged over supervised layers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub cls: f64,
    pub score: f64,
    pub bce: f64,
    pub dice: f64,
    pub foreground: f64,
    pub total: f64,
}

impl LossReport {
    pub const HEADER: &'static str = "step,cls,score,bce,dice,foreground,total";

    fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("cls", self.cls),
            ("score", self.score),
            ("bce", self.bce),
            ("dice", self.dice),
            ("foreground", self.foreground),
            ("total", self.total),
        ]
    }

    /// Name of the first non-finite component.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.fields().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

/// The loss graph of one scene.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: Var,
    pub report: LossReport,
    pub matches: Vec<LayerMatch>,
}

/// Indices of the supervised layers among `layers` predictions.
pub fn supervised_layers(layers: usize, deep_supervision: bool) -> std::ops::Range<usize> {
    if deep_supervision {
        0..layers
    } else {
        layers.saturating_sub(1)..layers
    }
}

/// Weighted loss over the supervised layers plus the foreground term. With
/// `frozen`, those matches replace fresh Hungarian matching.
pub fn total_loss(
    g: &mut Graph,
    preds: &[PredictionVars],
    foreground: Var,
    scene: &PreparedScene,
    cfg: &TrainConfig,
    frozen: Option<&[LayerMatch]>,
) -> Result<LossOutput, TrainError> {
    if preds.is_empty() {
        return Err(TrainError::Contract("no layer predictions to supervise".into()));
    }
    let layers = supervised_layers(preds.len(), cfg.deep_supervision);
    if let Some(f) = frozen {
        if f.len() != layers.len() {
            return Err(TrainError::Contract(format!(
                "{} frozen matches for {} supervised layers",
                f.len(),
                layers.len()
            )));
        }
    }
    let gt = &scene.gt;
    let inv = 1.0 / layers.len() as f64;
    let mut report = LossReport::default();
    let mut matches = Vec::with_capacity(layers.len());
    let mut parts = Vec::new();
    for (slot, l) in layers.enumerate() {
        let vars = &preds[l];
        let m = match frozen {
            Some(f) => f[slot].clone(),
            None => match_layer(&LayerPrediction::from_vars(g, vars), gt, &scene.weights, &cfg.matching),
        };
        let k = g.value(vars.class_logits).rows();
        let no_instance = g.value(vars.class_logits).cols() - 1;
        let targets = class_targets(k, no_instance, &m.assignment, gt);
        let pairs = &m.assignment.pairs;
        let cls = classification_loss(g, vars.class_logits, &targets)?;
        let score = score_loss(g, vars.iou_score, pairs, &m.iou_targets)?;
        let bce = bce_mask_loss(g, vars.sp_mask, pairs, &gt.superpoint_masks, &scene.weights)?;
        let dice = dice_loss(g, vars.sp_mask, pairs, &gt.superpoint_masks, &scene.weights, DICE_EPS)?;
        report.cls += inv * g.scalar(cls);
        report.score += inv * g.scalar(score);
        report.bce += inv * g.scalar(bce);
        report.dice += inv * g.scalar(dice);
        for (v, w) in [
            (cls, cfg.w_cls),
            (score, cfg.w_score),
            (bce, cfg.w_bce),
            (dice, cfg.w_dice),
        ] {
            parts.push(g.scale(v, w * inv));
        }
        matches.push(m);
    }
    let fg = foreground_loss(g, foreground, &scene.scene.foreground())?;
    report.foreground = g.scalar(fg);
    parts.push(g.scale(fg, cfg.w_foreground));
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    report.total = g.scalar(total);
    Ok(LossOutput { total, report, matches })
}

/// Every discrete choice of one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub decisions: Decisions,
    pub matches: Vec<LayerMatch>,
}

/// Forward pass and loss on one scene. Returns the graph for a backward pass
/// and the choices made, which a later call can replay.
pub fn compute_loss(
    model: &Model,
    store: &ParamStore,
    scene: &PreparedScene,
    cfg: &TrainConfig,
    replay: Option<&Replay>,
) -> Result<(Graph, LossOutput, Replay), TrainError> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, store, scene, replay.map(|r| &r.decisions))?;
    let loss = total_loss(
        &mut g,
        &out.decoder.predictions,
        out.foreground,
        scene,
        cfg,
        replay.map(|r| r.matches.as_slice()),
    )?;
    let replay = Replay {
        decisions: out.decisions(),
        matches: loss.matches.clone(),
    };
    Ok((g, loss, replay))
}

/// Adaptive moment estimation without weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (id, grad) in grads.iter() {
            let i = id.index();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((p, g), m), v) in store.value_mut(id).data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Trains on `scenes` round-robin for `cfg.steps` steps, calling `observe`
/// after each step. Stops at the first non-finite loss component or gradient.
pub fn fit(
    model: &Model,
    store: &mut ParamStore,
    scenes: &[PreparedScene],
    cfg: &TrainConfig,
    mut observe: impl FnMut(usize, &LossReport),
) -> Result<Vec<LossReport>, TrainError> {
    cfg.check()?;
    if scenes.is_empty() {
        return Err(TrainError::Contract("training needs at least one scene".into()));
    }
    let mut adam = Adam::new(store, cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let scene = &scenes[step % scenes.len()];
        let (g, loss, _) = compute_loss(model, store, scene, cfg, None)?;
        if let Some(component) = loss.report.first_non_finite() {
            return Err(TrainError::NonFinite {
                step,
                component: component.into(),
            });
        }
        let grads = g.backward(loss.total, store)?;
        if let Some((id, _)) = grads.iter().find(|(_, m)| !m.is_finite()) {
            return Err(TrainError::NonFinite {
                step,
                component: format!("gradient of {}", store.name(id)),
            });
        }
        adam.step(store, &grads);
        observe(step, &loss.report);
        trace.push(loss.report);
    }
    Ok(trace)
}

/// Loss trace as CSV, one row per step.
pub fn write_loss_csv<W: Write>(mut w: W, trace: &[LossReport]) -> std::io::Result<()> {
    writeln!(w, "{}", LossReport::HEADER)?;
    for (step, r) in trace.iter().enumerate() {
        write!(w, "{step}")?;
        for (_, v) in r.fields() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
