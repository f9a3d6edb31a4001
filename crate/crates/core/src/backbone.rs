//! Per-point features from a small voxel U-Net.
//!
//! Points are embedded from their in-voxel offset and colour, mean-pooled into
//! occupied voxels, pooled `levels` more times into 2x coarser cells, then
//! unpooled back with skip concatenation. The finest voxel feature is
//! broadcast to its points and fused with the point embedding.
//!
//! Pooling sums rows in a canonical order (voxel coordinates, then point
//! attributes), so the output does not depend on the order points arrive in.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::numerics::{
    derive_seed, rng_from_seed, Activation, Graph, Linear, Matrix, Mlp, MlpSpec, NumericsError, ParamStore, Var,
};
use crate::scenegen::{voxelize, Scene};

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Finest voxel edge, metres.
    pub base_voxel: f64,
    pub channels: usize,
    pub levels: usize,
    pub seed: u64,
    /// Append the point position, normalised to the scene bounding box, to the
    /// point embedding input.
    pub abs_pos: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            base_voxel: 0.05,
            channels: 32,
            levels: 2,
            seed: 0,
            abs_pos: true,
        }
    }
}

impl BackboneConfig {
    pub fn check(&self) -> Result<(), NumericsError> {
        if self.levels < 1 {
            return Err(NumericsError::Contract("backbone needs at least one level".into()));
        }
        if self.channels < 8 {
            return Err(NumericsError::Contract("backbone needs at least 8 channels".into()));
        }
        if !(self.base_voxel > 0.0) {
            return Err(NumericsError::Contract("voxel size must be positive".into()));
        }
        Ok(())
    }

    fn input_width(&self) -> usize {
        if self.abs_pos {
            9
        } else {
            6
        }
    }
}

/// Scene-dependent structure the backbone reuses across forward passes.
#[derive(Clone, Debug)]
pub struct BackboneInput {
    pub point_inputs: Matrix,
    pub point_voxel: Rc<Vec<usize>>,
    /// `pools[0]` groups points into finest voxels; `pools[l]` groups level
    /// `l - 1` voxels into level `l` cells.
    pub pools: Vec<Rc<Vec<Vec<usize>>>>,
    /// `parents[l - 1][v]` is the level-`l` cell holding level `l - 1` voxel `v`.
    pub parents: Vec<Rc<Vec<usize>>>,
}

impl BackboneInput {
    pub fn new(scene: &Scene, cfg: &BackboneConfig) -> Result<Self, NumericsError> {
        cfg.check()?;
        if scene.is_empty() {
            return Err(NumericsError::Contract("backbone input scene is empty".into()));
        }
        let n = scene.len();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &scene.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = (0..3).map(|k| hi[k] - lo[k]).fold(1e-9, f64::max);

        let width = cfg.input_width();
        let mut inputs = Matrix::zeros(n, width);
        for i in 0..n {
            let p = scene.positions[i];
            let row = inputs.row_mut(i);
            for k in 0..3 {
                let q = p[k] / cfg.base_voxel;
                row[k] = q - q.floor() - 0.5;
                row[3 + k] = scene.colors[i][k] - 0.5;
                if cfg.abs_pos {
                    row[6 + k] = (p[k] - lo[k]) / span - 0.5;
                }
            }
        }

        let vox = voxelize(scene, cfg.base_voxel);
        let mut members = vox.members;
        for m in &mut members {
            m.sort_by(|&a, &b| canonical(inputs.row(a), inputs.row(b)));
        }
        let mut pools = vec![Rc::new(members)];
        let mut parents = Vec::with_capacity(cfg.levels);
        let mut coords = vox.coords;
        for _ in 0..cfg.levels {
            let mut cells: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
            for (v, c) in coords.iter().enumerate() {
                cells.entry(c.map(|x| x >> 1)).or_default().push(v);
            }
            let mut parent = vec![0; coords.len()];
            let mut next_coords = Vec::with_capacity(cells.len());
            let mut groups = Vec::with_capacity(cells.len());
            for (ci, (c, m)) in cells.into_iter().enumerate() {
                for &v in &m {
                    parent[v] = ci;
                }
                next_coords.push(c);
                groups.push(m);
            }
            pools.push(Rc::new(groups));
            parents.push(Rc::new(parent));
            coords = next_coords;
        }
        Ok(Self {
            point_inputs: inputs,
            point_voxel: Rc::new(vox.point_voxel),
            pools,
            parents,
        })
    }

    pub fn voxel_counts(&self) -> Vec<usize> {
        self.pools.iter().map(|p| p.len()).collect()
    }
}

fn canonical(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    embed: Mlp,
    encoders: Vec<Mlp>,
    decoders: Vec<Mlp>,
    output: Linear,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, cfg: &BackboneConfig) -> Result<Self, NumericsError> {
        cfg.check()?;
        let c = cfg.channels;
        let seed = |name: &str| derive_seed(cfg.seed, name);
        let embed = Mlp::new(
            store,
            "backbone.embed",
            &MlpSpec {
                widths: vec![cfg.input_width(), c, c],
                activations: vec![Activation::Relu, Activation::Relu],
                seed: seed("embed"),
            },
        )?;
        let block = |store: &mut ParamStore, name: String, input: usize| {
            Mlp::new(
                store,
                &name,
                &MlpSpec {
                    widths: vec![input, c],
                    activations: vec![Activation::Relu],
                    seed: seed(&name),
                },
            )
        };
        let encoders = (0..=cfg.levels)
            .map(|l| block(store, format!("backbone.enc{l}"), c))
            .collect::<Result<Vec<_>, _>>()?;
        let decoders = (0..cfg.levels)
            .map(|l| block(store, format!("backbone.dec{l}"), 2 * c))
            .collect::<Result<Vec<_>, _>>()?;
        let output = Linear::new(store, "backbone.out", 2 * c, c, &mut rng_from_seed(seed("out")))?;
        Ok(Self {
            cfg: cfg.clone(),
            embed,
            encoders,
            decoders,
            output,
        })
    }

    /// `F_P`, one `channels`-wide row per point.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: &BackboneInput) -> Result<Var, NumericsError> {
        let x = g.constant(input.point_inputs.clone());
        let embedded = self.embed.forward(g, store, x)?;

        let mut skips = Vec::with_capacity(self.cfg.levels + 1);
        let pooled = g.segment_mean(embedded, input.pools[0].clone())?;
        skips.push(self.encoders[0].forward(g, store, pooled)?);
        for l in 1..=self.cfg.levels {
            let pooled = g.segment_mean(skips[l - 1], input.pools[l].clone())?;
            skips.push(self.encoders[l].forward(g, store, pooled)?);
        }

        let mut up = skips[self.cfg.levels];
        for l in (1..=self.cfg.levels).rev() {
            let spread = g.gather_rows(up, input.parents[l - 1].clone())?;
            let cat = g.concat_cols(&[spread, skips[l - 1]])?;
            up = self.decoders[l - 1].forward(g, store, cat)?;
        }
        let per_point = g.gather_rows(up, input.point_voxel.clone())?;
        let fused = g.concat_cols(&[per_point, embedded])?;
        self.output.forward(g, store, fused)
    }
}

/// Convenience wrapper: features of `scene` as a plain matrix.
pub fn extract_point_features(scene: &Scene, backbone: &Backbone, store: &ParamStore) -> Result<Matrix, NumericsError> {
    let input = BackboneInput::new(scene, &backbone.cfg)?;
    let mut g = Graph::new();
    let fp = backbone.forward(&mut g, store, &input)?;
    Ok(g.value(fp).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, SceneSpec};

    fn small_scene() -> Scene {
        generate_scene(
            2,
            &SceneSpec {
                n_objects: 2,
                n_points: 300,
                ..SceneSpec::default()
            },
        )
        .unwrap()
    }

    fn build(cfg: &BackboneConfig) -> (Backbone, ParamStore) {
        let mut store = ParamStore::new();
        let b = Backbone::new(&mut store, cfg).unwrap();
        (b, store)
    }

    #[test]
    fn output_shape_and_finiteness() {
        let scene = small_scene();
        let cfg = BackboneConfig::default();
        let (b, store) = build(&cfg);
        let fp = extract_point_features(&scene, &b, &store).unwrap();
        assert_eq!(fp.shape(), (scene.len(), cfg.channels));
        assert!(fp.is_finite());
    }

    #[test]
    fn permutation_equivariance_is_exact() {
        let scene = small_scene();
        let (b, store) = build(&BackboneConfig::default());
        let fp = extract_point_features(&scene, &b, &store).unwrap();
        let order: Vec<usize> = (0..scene.len()).map(|i| (i * 7 + 3) % scene.len()).collect();
        let fp_perm = extract_point_features(&scene.permuted(&order), &b, &store).unwrap();
        for (i, &src) in order.iter().enumerate() {
            assert_eq!(fp_perm.row(i), fp.row(src));
        }
    }

    #[test]
    fn coincident_points_get_identical_features() {
        let mut scene = small_scene();
        let last = scene.len() - 1;
        scene.positions[last] = scene.positions[0];
        scene.colors[last] = scene.colors[0];
        let (b, store) = build(&BackboneConfig::default());
        let fp = extract_point_features(&scene, &b, &store).unwrap();
        assert_eq!(fp.row(0), fp.row(last));
    }

    #[test]
    fn coarsening_halves_by_shift() {
        let scene = small_scene();
        let cfg = BackboneConfig::default();
        let input = BackboneInput::new(&scene, &cfg).unwrap();
        let counts = input.voxel_counts();
        assert_eq!(counts.len(), cfg.levels + 1);
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(input.pools[0].iter().map(Vec::len).sum::<usize>(), scene.len());
    }

    #[test]
    fn rejects_bad_config() {
        let mut store = ParamStore::new();
        let cfg = BackboneConfig {
            levels: 0,
            ..BackboneConfig::default()
        };
        assert!(Backbone::new(&mut store, &cfg).is_err());
        let cfg = BackboneConfig {
            channels: 4,
            ..BackboneConfig::default()
        };
        assert!(Backbone::new(&mut store, &cfg).is_err());
    }
}
