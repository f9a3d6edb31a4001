//! Query decoder: learnable queries refined by masked cross-attention over
//! superpoint features and unmasked cross-attention over keypoint features,
//! with a prediction head after every layer.
//!
//! The mask each layer applies comes from the previous layer's predicted
//! superpoint mask (see [`build_attention_mask`]), so queries progressively
//! restrict themselves to the superpoints they already claim.

mod attention;
mod head;

pub use attention::{Attended, Attention};
pub use head::{LayerPrediction, PredictionHead, PredictionVars};

use crate::numerics::{
    derive_seed, rng_from_seed, Activation, Graph, LayerNorm, Linear, Matrix, Mlp, MlpSpec, NumericsError, ParamId,
    ParamStore, Var,
};

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    /// Query count `K`.
    pub k: usize,
    /// Embedding width `D`.
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    /// Mask threshold.
    pub tau: f64,
    pub n_class: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            k: 20,
            d: 64,
            layers: 6,
            heads: 8,
            tau: 0.5,
            n_class: 3,
        }
    }
}

impl DecoderConfig {
    pub fn check(&self) -> Result<(), NumericsError> {
        let bad = |m: String| Err(NumericsError::Contract(m));
        if self.k == 0 || self.d == 0 || self.n_class == 0 {
            return bad("decoder.k, decoder.d and the class count must be positive".into());
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!(
                "decoder.d = {} is not divisible by decoder.heads = {}",
                self.d, self.heads
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("decoder.tau must lie in (0, 1), got {}", self.tau));
        }
        Ok(())
    }
}

/// `K x M` additive attention mask with entries `0` or `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    pub values: Matrix,
    /// Rows that would have been fully masked and were opened instead.
    pub fallback_rows: Vec<usize>,
}

/// `0` where `prev >= tau`, `-inf` elsewhere. A row with no entry at or above
/// `tau` is left fully open (all zeros).
pub fn build_attention_mask(prev: &Matrix, tau: f64) -> AttentionMask {
    let mut values = prev.map(|m| if m >= tau { 0.0 } else { f64::NEG_INFINITY });
    let mut fallback_rows = Vec::new();
    if values.cols() > 0 {
        for r in 0..values.rows() {
            let row = values.row_mut(r);
            if row.iter().all(|v| *v == f64::NEG_INFINITY) {
                row.fill(0.0);
                fallback_rows.push(r);
            }
        }
    }
    AttentionMask { values, fallback_rows }
}

/// One refinement step of the queries.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub global_attn: Attention,
    pub local_in: Linear,
    pub local_attn: Attention,
    pub fuse: Linear,
    pub norm_fuse: LayerNorm,
    pub self_attn: Attention,
    pub norm_self: LayerNorm,
    pub ffn: Mlp,
    pub norm_ffn: LayerNorm,
}

/// Per-layer output: refined queries and the global branch's weights per head.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub z: Var,
    pub global_weights: Vec<Matrix>,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        index: usize,
        cfg: &DecoderConfig,
        local_width: usize,
        seed: u64,
    ) -> Result<Self, NumericsError> {
        let (d, h) = (cfg.d, cfg.heads);
        let name = |part: &str| format!("decoder.{index}.{part}");
        let mut rng = rng_from_seed(derive_seed(seed, &name("linear")));
        Ok(Self {
            global_attn: Attention::new(store, &name("global"), d, h, seed)?,
            local_in: Linear::new(store, &name("local_in"), local_width, d, &mut rng)?,
            local_attn: Attention::new(store, &name("local"), d, h, seed)?,
            fuse: Linear::new(store, &name("fuse"), 2 * d, d, &mut rng)?,
            norm_fuse: LayerNorm::new(store, &name("norm_fuse"), d)?,
            self_attn: Attention::new(store, &name("self"), d, h, seed)?,
            norm_self: LayerNorm::new(store, &name("norm_self"), d)?,
            ffn: Mlp::new(
                store,
                &name("ffn"),
                &MlpSpec {
                    widths: vec![d, 4 * d, d],
                    activations: vec![Activation::Relu, Activation::None],
                    seed: derive_seed(seed, &name("ffn")),
                },
            )?,
            norm_ffn: LayerNorm::new(store, &name("norm_ffn"), d)?,
        })
    }

    /// A disabled branch (`None`) contributes zeros to the fusion layer.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: Var,
        f_g: Option<Var>,
        f_l: Option<Var>,
        mask: &AttentionMask,
    ) -> Result<LayerOutput, NumericsError> {
        let k = g.value(z).rows();
        let d = g.value(z).cols();
        let (branch_g, global_weights) = match f_g {
            Some(f) => {
                let a = self.global_attn.forward(g, store, z, f, Some(&mask.values))?;
                (a.output, a.weights)
            }
            None => (g.constant(Matrix::zeros(k, d)), Vec::new()),
        };
        let branch_l = match f_l {
            Some(f) => {
                let projected = self.local_in.forward(g, store, f)?;
                self.local_attn.forward(g, store, z, projected, None)?.output
            }
            None => g.constant(Matrix::zeros(k, d)),
        };
        let cat = g.concat_cols(&[branch_g, branch_l])?;
        let fused = self.fuse.forward(g, store, cat)?;
        let z = g.add(z, fused)?;
        let z = self.norm_fuse.forward(g, store, z)?;

        let s = self.self_attn.forward(g, store, z, z, None)?.output;
        let z = g.add(z, s)?;
        let z = self.norm_self.forward(g, store, z)?;

        let f = self.ffn.forward(g, store, z)?;
        let z = g.add(z, f)?;
        let z = self.norm_ffn.forward(g, store, z)?;
        Ok(LayerOutput { z, global_weights })
    }
}

/// Queries, layers and the shared prediction head.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub queries: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub head: PredictionHead,
}

/// Decoder inputs; `None` disables a branch.
#[derive(Clone, Copy, Debug)]
pub struct DecoderInputs {
    /// `M x D` superpoint features.
    pub f_g: Option<Var>,
    /// `N_key x C_L` keypoint features.
    pub f_l: Option<Var>,
    /// `M x D` mask-aware features.
    pub s_mask: Var,
}

#[derive(Clone, Debug)]
pub struct DecoderRun {
    /// `layers + 1` predictions, the first from the initial queries.
    pub predictions: Vec<PredictionVars>,
    /// Mask used by each layer.
    pub masks: Vec<AttentionMask>,
    /// Global-branch weights per layer, per head.
    pub attention: Vec<Vec<Matrix>>,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        cfg: &DecoderConfig,
        local_width: usize,
        seed: u64,
    ) -> Result<Self, NumericsError> {
        cfg.check()?;
        let queries = store.insert_uniform(
            "decoder.queries",
            cfg.k,
            cfg.d,
            cfg.d,
            &mut rng_from_seed(derive_seed(seed, "decoder.queries")),
        )?;
        let layers = (0..cfg.layers)
            .map(|i| DecoderLayer::new(store, i, cfg, local_width, seed))
            .collect::<Result<_, _>>()?;
        let head = PredictionHead::new(store, cfg.d, cfg.n_class, seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            queries,
            layers,
            head,
        })
    }

    /// Runs every layer. With `frozen`, layer `l` uses `frozen[l]` instead of
    /// a mask derived from the previous prediction.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        inputs: &DecoderInputs,
        frozen: Option<&[AttentionMask]>,
    ) -> Result<DecoderRun, NumericsError> {
        if let Some(f) = frozen {
            if f.len() != self.layers.len() {
                return Err(NumericsError::Contract(format!(
                    "{} frozen masks for {} layers",
                    f.len(),
                    self.layers.len()
                )));
            }
        }
        let mut z = g.param(store, self.queries);
        let mut pred = self.head.forward(g, store, z, inputs.s_mask)?;
        let mut run = DecoderRun {
            predictions: vec![pred],
            masks: Vec::with_capacity(self.layers.len()),
            attention: Vec::with_capacity(self.layers.len()),
        };
        for (l, layer) in self.layers.iter().enumerate() {
            let mask = match frozen {
                Some(f) => f[l].clone(),
                None => build_attention_mask(g.value(pred.sp_mask), self.cfg.tau),
            };
            let out = layer.forward(g, store, z, inputs.f_g, inputs.f_l, &mask)?;
            z = out.z;
            pred = self.head.forward(g, store, z, inputs.s_mask)?;
            run.predictions.push(pred);
            run.masks.push(mask);
            run.attention.push(out.global_weights);
        }
        Ok(run)
    }
}

/// Decoder over plain matrices, returning every layer's prediction.
pub fn run_decoder(
    decoder: &Decoder,
    store: &ParamStore,
    f_g: Option<&Matrix>,
    f_l: Option<&Matrix>,
    s_mask: &Matrix,
) -> Result<Vec<LayerPrediction>, NumericsError> {
    let mut g = Graph::new();
    let inputs = DecoderInputs {
        f_g: f_g.map(|m| g.constant(m.clone())),
        f_l: f_l.map(|m| g.constant(m.clone())),
        s_mask: g.constant(s_mask.clone()),
    };
    let run = decoder.forward(&mut g, store, &inputs, None)?;
    Ok(run
        .predictions
        .iter()
        .map(|p| LayerPrediction::from_vars(&g, p))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_boundary_is_inclusive() {
        let prev = Matrix::from_rows(&[[0.6, 0.4, 0.5]]).unwrap();
        let a = build_attention_mask(&prev, 0.5);
        assert_eq!(a.values.data(), &[0.0, f64::NEG_INFINITY, 0.0]);
        assert!(a.fallback_rows.is_empty());
    }

    #[test]
    fn mask_fallback_opens_row() {
        let prev = Matrix::from_rows(&[[0.1, 0.2], [0.9, 0.0]]).unwrap();
        let a = build_attention_mask(&prev, 0.5);
        assert_eq!(a.values.row(0), &[0.0, 0.0]);
        assert_eq!(a.values.row(1), &[0.0, f64::NEG_INFINITY]);
        assert_eq!(a.fallback_rows, vec![0]);
    }

    #[test]
    fn layer_count() {
        for layers in [0, 6] {
            let cfg = DecoderConfig {
                k: 3,
                d: 8,
                layers,
                heads: 2,
                ..DecoderConfig::default()
            };
            let mut store = ParamStore::new();
            let dec = Decoder::new(&mut store, &cfg, 5, 1).unwrap();
            let preds = run_decoder(
                &dec,
                &store,
                Some(&Matrix::filled(4, 8, 0.1)),
                Some(&Matrix::filled(2, 5, 0.3)),
                &Matrix::filled(4, 8, 0.2),
            )
            .unwrap();
            assert_eq!(preds.len(), layers + 1);
            for p in &preds {
                assert_eq!(p.class_probs.shape(), (3, 4));
                assert_eq!(p.sp_mask.shape(), (3, 4));
                assert!(p
                    .class_probs
                    .iter_rows()
                    .all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn bad_config() {
        let cfg = DecoderConfig {
            d: 10,
            heads: 4,
            ..DecoderConfig::default()
        };
        assert!(cfg.check().is_err());
        let cfg = DecoderConfig {
            tau: 1.0,
            ..DecoderConfig::default()
        };
        assert!(cfg.check().is_err());
    }
}
