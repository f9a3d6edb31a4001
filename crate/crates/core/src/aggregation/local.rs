use std::rc::Rc;

use super::{sphere_query, AggregationError};
use crate::numerics::{derive_seed, rng_from_seed, Activation, Graph, Linear, Matrix, Mlp, MlpSpec, ParamStore, Var};

/// Keypoint features of the local branch.
#[derive(Clone, Debug)]
pub struct LocalFeatures {
    /// `N_key x width`.
    pub features: Var,
    pub keypoints: Vec<usize>,
    pub positions: Vec<[f64; 3]>,
}

/// Two-radius neighbourhood aggregation with a shared point MLP.
#[derive(Clone, Debug)]
pub struct LocalAggregator {
    point_mlp: Mlp,
    output: Linear,
    pub width: usize,
}

impl LocalAggregator {
    pub fn new(store: &mut ParamStore, in_channels: usize, width: usize, seed: u64) -> Result<Self, AggregationError> {
        let point_mlp = Mlp::new(
            store,
            "msa.point_mlp",
            &MlpSpec {
                widths: vec![in_channels + 3, width, width],
                activations: vec![Activation::Relu, Activation::Relu],
                seed: derive_seed(seed, "point_mlp"),
            },
        )?;
        let output = Linear::new(
            store,
            "msa.out",
            2 * width,
            width,
            &mut rng_from_seed(derive_seed(seed, "out")),
        )?;
        Ok(Self {
            point_mlp,
            output,
            width,
        })
    }

    pub fn point_mlp(&self) -> &Mlp {
        &self.point_mlp
    }

    pub fn output_layer(&self) -> &Linear {
        &self.output
    }

    /// Max-pooled MLP response over each keypoint's `r`-ball; a keypoint with
    /// no neighbours gets a zero row.
    #[allow(clippy::too_many_arguments)]
    pub fn radius_summary(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fp: Var,
        positions: &[[f64; 3]],
        keypoints: &[usize],
        r: f64,
        cap: usize,
    ) -> Result<Var, AggregationError> {
        let centers: Vec<[f64; 3]> = keypoints.iter().map(|&k| positions[k]).collect();
        let neighbours = sphere_query(&centers, positions, r, cap);
        self.summarize(g, store, fp, positions, &centers, &neighbours)
    }

    /// Like [`radius_summary`](Self::radius_summary) with explicit neighbour lists.
    pub fn summarize(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fp: Var,
        positions: &[[f64; 3]],
        centers: &[[f64; 3]],
        neighbours: &[Vec<usize>],
    ) -> Result<Var, AggregationError> {
        let mut flat = Vec::new();
        let mut groups = Vec::with_capacity(neighbours.len());
        let mut rel = Vec::new();
        for (c, list) in centers.iter().zip(neighbours) {
            let start = flat.len();
            for &i in list {
                flat.push(i);
                rel.extend((0..3).map(|a| positions[i][a] - c[a]));
            }
            groups.push((start..flat.len()).collect::<Vec<_>>());
        }
        let rows = flat.len();
        let gathered = g.gather_rows(fp, Rc::new(flat))?;
        let offsets = g.constant(Matrix::new(rows, 3, rel)?);
        let input = g.concat_cols(&[gathered, offsets])?;
        let h = self.point_mlp.forward(g, store, input)?;
        Ok(g.segment_max(h, &groups)?)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fp: Var,
        positions: &[[f64; 3]],
        keypoints: &[usize],
        radii: [f64; 2],
        cap: usize,
    ) -> Result<LocalFeatures, AggregationError> {
        if !(radii[0] > 0.0 && radii[0] < radii[1]) {
            return Err(AggregationError::Contract(format!(
                "radii must satisfy 0 < r1 < r2, got {radii:?}"
            )));
        }
        let inner = self.radius_summary(g, store, fp, positions, keypoints, radii[0], cap)?;
        let outer = self.radius_summary(g, store, fp, positions, keypoints, radii[1], cap)?;
        let both = g.concat_cols(&[inner, outer])?;
        let features = self.output.forward(g, store, both)?;
        Ok(LocalFeatures {
            features,
            keypoints: keypoints.to_vec(),
            positions: keypoints.iter().map(|&k| positions[k]).collect(),
        })
    }
}
