use std::rc::Rc;

use super::AggregationError;
use crate::numerics::{derive_seed, rng_from_seed, Graph, Linear, Mlp, MlpSpec, ParamStore, Var};

/// Global branch outputs, one row per superpoint.
#[derive(Clone, Copy, Debug)]
pub struct GlobalFeatures {
    pub f_g: Var,
    pub s_mask: Var,
}

/// Mean of member point features per superpoint.
pub fn superpoint_avg_pool(g: &mut Graph, fp: Var, members: Rc<Vec<Vec<usize>>>) -> Result<Var, AggregationError> {
    Ok(g.segment_mean(fp, members)?)
}

/// `F_G = linear(pooled)` and mask-aware `S_mask = MLP(F_G)`.
#[derive(Clone, Debug)]
pub struct GlobalProjector {
    pub projection: Linear,
    pub mask_mlp: Mlp,
}

impl GlobalProjector {
    pub fn new(store: &mut ParamStore, in_channels: usize, d: usize, seed: u64) -> Result<Self, AggregationError> {
        let projection = Linear::new(
            store,
            "global.proj",
            in_channels,
            d,
            &mut rng_from_seed(derive_seed(seed, "proj")),
        )?;
        let mask_mlp = Mlp::new(
            store,
            "global.mask_mlp",
            &MlpSpec::relu_hidden(&[d, d, d], derive_seed(seed, "mask_mlp")),
        )?;
        Ok(Self { projection, mask_mlp })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, pooled: Var) -> Result<GlobalFeatures, AggregationError> {
        let f_g = self.projection.forward(g, store, pooled)?;
        let s_mask = self.mask_mlp.forward(g, store, f_g)?;
        Ok(GlobalFeatures { f_g, s_mask })
    }
}
