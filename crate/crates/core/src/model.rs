//! The full network: backbone, both feature branches and the decoder.

use std::rc::Rc;

use crate::aggregation::{
    AggregationError, ForegroundHead, ForegroundScores, GlobalProjector, LocalAggregator, MsaConfig,
};
use crate::backbone::{Backbone, BackboneConfig, BackboneInput};
use crate::decoder::{AttentionMask, Decoder, DecoderConfig, DecoderInputs, DecoderRun, LayerPrediction};
use crate::numerics::{derive_seed, Graph, NumericsError, ParamStore, Var};
use crate::scenegen::{build_superpoints, GroundTruth, Scene, SuperpointPartition};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub msa: MsaConfig,
    /// Width of the local branch features.
    pub local_width: usize,
    pub decoder: DecoderConfig,
    /// Edge of the superpoint grid, metres.
    pub superpoint_size: f64,
    pub use_local: bool,
    pub use_global: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            msa: MsaConfig::default(),
            local_width: 32,
            decoder: DecoderConfig::default(),
            superpoint_size: 0.25,
            use_local: true,
            use_global: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<(), NumericsError> {
        self.backbone.check()?;
        self.decoder.check()?;
        let m = &self.msa;
        if !(m.r1 > 0.0 && m.r1 < m.r2) {
            return Err(NumericsError::Contract(format!(
                "msa radii must satisfy 0 < r1 < r2, got {} and {}",
                m.r1, m.r2
            )));
        }
        if !(m.beta > 0.0 && m.beta < 1.0) {
            return Err(NumericsError::Contract(format!(
                "msa.beta must lie in (0, 1), got {}",
                m.beta
            )));
        }
        if m.cap == 0 || m.k_cand == 0 || !(m.rq > 0.0) {
            return Err(NumericsError::Contract(
                "msa.cap, msa.k_cand and msa.rq must be positive".into(),
            ));
        }
        if self.local_width == 0 || !(self.superpoint_size > 0.0) {
            return Err(NumericsError::Contract(
                "local width and superpoint size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A scene with everything the model needs that does not depend on parameters.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub scene: Scene,
    pub partition: SuperpointPartition,
    pub members: Rc<Vec<Vec<usize>>>,
    /// Superpoint point counts.
    pub weights: Vec<f64>,
    pub gt: GroundTruth,
    pub backbone_input: BackboneInput,
}

impl PreparedScene {
    pub fn new(scene: Scene, cfg: &ModelConfig) -> Result<Self, NumericsError> {
        let partition = build_superpoints(&scene, cfg.superpoint_size);
        let gt = scene.ground_truth(&partition);
        let backbone_input = BackboneInput::new(&scene, &cfg.backbone)?;
        Ok(Self {
            members: Rc::new(partition.members()),
            weights: partition.weights(),
            gt,
            backbone_input,
            partition,
            scene,
        })
    }

    pub fn superpoints(&self) -> usize {
        self.partition.len()
    }
}

/// The discrete choices of a forward pass. Replaying them makes the forward
/// pass a smooth function of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Decisions {
    pub keypoints: Vec<usize>,
    pub masks: Vec<AttentionMask>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `N x 1` foreground probabilities.
    pub foreground: Var,
    pub keypoints: Vec<usize>,
    pub decoder: DecoderRun,
}

impl ForwardOutput {
    pub fn decisions(&self) -> Decisions {
        Decisions {
            keypoints: self.keypoints.clone(),
            masks: self.decoder.masks.clone(),
        }
    }

    pub fn predictions(&self, g: &Graph) -> Vec<LayerPrediction> {
        self.decoder
            .predictions
            .iter()
            .map(|p| LayerPrediction::from_vars(g, p))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub foreground: ForegroundHead,
    pub local: LocalAggregator,
    pub global: GlobalProjector,
    pub decoder: Decoder,
}

impl Model {
    /// Registers every parameter in `store`. Parameters of disabled branches
    /// are still created so checkpoints keep one layout.
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self, AggregationError> {
        cfg.check()?;
        let seed = cfg.seed;
        let backbone_cfg = BackboneConfig {
            seed: derive_seed(seed, "backbone"),
            ..cfg.backbone.clone()
        };
        let backbone = Backbone::new(store, &backbone_cfg)?;
        let c = backbone_cfg.channels;
        let foreground = ForegroundHead::new(store, c, derive_seed(seed, "foreground"))?;
        let local = LocalAggregator::new(store, c, cfg.local_width, derive_seed(seed, "msa"))?;
        let global = GlobalProjector::new(store, c, cfg.decoder.d, derive_seed(seed, "global"))?;
        let decoder = Decoder::new(store, &cfg.decoder, cfg.local_width, derive_seed(seed, "decoder"))?;
        Ok(Self {
            cfg: cfg.clone(),
            backbone,
            foreground,
            local,
            global,
            decoder,
        })
    }

    /// Fresh parameters for `cfg`.
    pub fn init(cfg: &ModelConfig) -> Result<(Self, ParamStore), AggregationError> {
        let mut store = ParamStore::new();
        let model = Self::new(&mut store, cfg)?;
        Ok((model, store))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        scene: &PreparedScene,
        frozen: Option<&Decisions>,
    ) -> Result<ForwardOutput, AggregationError> {
        let fp = self.backbone.forward(g, store, &scene.backbone_input)?;
        let foreground = self.foreground.forward(g, store, fp)?;
        let positions = &scene.scene.positions;

        let (f_l, keypoints) = if self.cfg.use_local {
            let keypoints = match frozen {
                Some(d) => d.keypoints.clone(),
                None => {
                    let f = ForegroundScores(g.value(foreground).data().to_vec());
                    self.cfg.msa.select_keypoints(positions, &f)?
                }
            };
            let m = &self.cfg.msa;
            let local = self
                .local
                .forward(g, store, fp, positions, &keypoints, [m.r1, m.r2], m.cap)?;
            (Some(local.features), keypoints)
        } else {
            (None, Vec::new())
        };

        let pooled = g.segment_mean(fp, scene.members.clone())?;
        let global = self.global.forward(g, store, pooled)?;
        let inputs = DecoderInputs {
            f_g: self.cfg.use_global.then_some(global.f_g),
            f_l,
            s_mask: global.s_mask,
        };
        let decoder = self
            .decoder
            .forward(g, store, &inputs, frozen.map(|d| d.masks.as_slice()))?;
        Ok(ForwardOutput {
            foreground,
            keypoints,
            decoder,
        })
    }

    /// Every layer's prediction for `scene`.
    pub fn predict_layers(
        &self,
        store: &ParamStore,
        scene: &PreparedScene,
    ) -> Result<Vec<LayerPrediction>, AggregationError> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, scene, None)?;
        Ok(out.predictions(&g))
    }
}
