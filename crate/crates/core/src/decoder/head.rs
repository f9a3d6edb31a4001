use crate::numerics::{derive_seed, Graph, Matrix, Mlp, MlpSpec, NumericsError, ParamStore, Var};

/// Shared per-layer head producing class, IoU score and superpoint mask.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub class_mlp: Mlp,
    pub score_mlp: Mlp,
}

/// Graph handles for one layer's prediction.
#[derive(Clone, Copy, Debug)]
pub struct PredictionVars {
    /// `K x (n_class + 1)` logits; the last column is "no instance".
    pub class_logits: Var,
    pub class_probs: Var,
    /// `K x 1`.
    pub iou_score: Var,
    /// `K x M`.
    pub sp_mask: Var,
}

/// Plain values of one layer's prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPrediction {
    pub class_probs: Matrix,
    pub iou_score: Vec<f64>,
    pub sp_mask: Matrix,
}

impl LayerPrediction {
    pub fn from_vars(g: &Graph, vars: &PredictionVars) -> Self {
        Self {
            class_probs: g.value(vars.class_probs).clone(),
            iou_score: g.value(vars.iou_score).data().to_vec(),
            sp_mask: g.value(vars.sp_mask).clone(),
        }
    }

    pub fn queries(&self) -> usize {
        self.class_probs.rows()
    }

    /// Number of real classes (excluding "no instance").
    pub fn n_class(&self) -> usize {
        self.class_probs.cols() - 1
    }
}

impl PredictionHead {
    pub fn new(store: &mut ParamStore, d: usize, n_class: usize, seed: u64) -> Result<Self, NumericsError> {
        Ok(Self {
            class_mlp: Mlp::new(
                store,
                "head.class",
                &MlpSpec::relu_hidden(&[d, d, n_class + 1], derive_seed(seed, "head.class")),
            )?,
            score_mlp: Mlp::new(
                store,
                "head.score",
                &MlpSpec::relu_hidden(&[d, d, 1], derive_seed(seed, "head.score")),
            )?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: Var,
        s_mask: Var,
    ) -> Result<PredictionVars, NumericsError> {
        let class_logits = self.class_mlp.forward(g, store, z)?;
        let class_probs = g.softmax_rows(class_logits)?;
        let score = self.score_mlp.forward(g, store, z)?;
        let iou_score = g.sigmoid(score);
        let mask_logits = g.matmul_nt(z, s_mask)?;
        let sp_mask = g.sigmoid(mask_logits);
        Ok(PredictionVars {
            class_logits,
            class_probs,
            iou_score,
            sp_mask,
        })
    }
}
