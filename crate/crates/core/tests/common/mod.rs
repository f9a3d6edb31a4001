#![allow(dead_code)]

use psgformer::backbone::{BackboneConfig, BackboneInput};
use psgformer::decoder::DecoderConfig;
use psgformer::numerics::{derive_seed, rng_from_seed};
use psgformer::scenegen::{generate_scene, SceneSpec, SuperpointPartition};
use psgformer::training::{compute_loss, TrainConfig};
use psgformer::{Model, ModelConfig, ParamStore, PreparedScene};
use rand::seq::IndexedRandom;

/// Small model: K=4, D=16, 2 layers.
pub fn micro_config(seed: u64) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            channels: 8,
            levels: 1,
            base_voxel: 0.1,
            ..BackboneConfig::default()
        },
        local_width: 8,
        decoder: DecoderConfig {
            k: 4,
            d: 16,
            layers: 2,
            heads: 4,
            ..DecoderConfig::default()
        },
        seed,
        ..ModelConfig::default()
    }
}

/// A 120-point scene cut into 15 superpoints of 8 points each, ordered along x.
pub fn micro_scene(seed: u64, cfg: &ModelConfig) -> PreparedScene {
    let spec = SceneSpec {
        n_objects: 1,
        n_points: 120,
        n_class: cfg.decoder.n_class,
        room_extent: 1.5,
    };
    let scene = generate_scene(seed, &spec).unwrap();
    let mut order: Vec<usize> = (0..scene.len()).collect();
    order.sort_by(|&a, &b| scene.positions[a][0].total_cmp(&scene.positions[b][0]));
    let mut assignment = vec![0; scene.len()];
    for (rank, &p) in order.iter().enumerate() {
        assignment[p] = rank / 8;
    }
    let partition = SuperpointPartition::from_assignment(assignment);
    let gt = scene.ground_truth(&partition);
    let backbone_input = BackboneInput::new(&scene, &cfg.backbone).unwrap();
    PreparedScene {
        members: std::rc::Rc::new(partition.members()),
        weights: partition.weights(),
        gt,
        backbone_input,
        partition,
        scene,
    }
}

#[derive(Clone, Debug)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// `|a - n| / max(|a|, |n|)`, with differences below `1e-9` counted as exact.
    pub fn relative_error(&self) -> f64 {
        let diff = (self.analytic - self.numeric).abs();
        if diff < 1e-9 {
            return 0.0;
        }
        diff / self.analytic.abs().max(self.numeric.abs())
    }
}

/// Central differences of the total loss for `n` random scalars of the
/// parameters whose names start with one of `prefixes`. Discrete choices are
/// frozen at the unperturbed point.
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    model: &Model,
    store: &ParamStore,
    scene: &PreparedScene,
    cfg: &TrainConfig,
    prefixes: &[&str],
    n: usize,
    seed: u64,
    h: f64,
) -> Vec<GradSample> {
    let (_, _, replay) = compute_loss(model, store, scene, cfg, None).unwrap();
    let (g, loss, _) = compute_loss(model, store, scene, cfg, Some(&replay)).unwrap();
    let grads = g.backward(loss.total, store).unwrap();
    let mut entries = Vec::new();
    for (id, name, value) in store.iter() {
        if prefixes.iter().any(|p| name.starts_with(p)) {
            entries.extend((0..value.len()).map(|i| (id, i)));
        }
    }
    assert!(!entries.is_empty(), "no parameters under {prefixes:?}");
    let mut rng = rng_from_seed(derive_seed(seed, "grad_check"));
    let picked: Vec<_> = entries.choose_multiple(&mut rng, n).copied().collect();
    let mut work = store.clone();
    picked
        .into_iter()
        .map(|(id, i)| {
            let x = store.value(id).data()[i];
            let mut eval = |v: f64| {
                work.value_mut(id).data_mut()[i] = v;
                let (g, loss, _) = compute_loss(model, &work, scene, cfg, Some(&replay)).unwrap();
                g.scalar(loss.total)
            };
            let numeric = (eval(x + h) - eval(x - h)) / (2.0 * h);
            work.value_mut(id).data_mut()[i] = x;
            GradSample {
                name: store.name(id).to_string(),
                index: i,
                analytic: grads.get(id).data()[i],
                numeric,
            }
        })
        .collect()
}

/// Learnable blocks and the parameter name prefixes they own.
pub const BLOCKS: [(&str, &[&str]); 7] = [
    ("backbone", &["backbone."]),
    ("foreground head", &["msa.foreground"]),
    ("local aggregation", &["msa.point_mlp", "msa.out"]),
    ("projections", &["global."]),
    ("decoder layer 0", &["decoder.0.", "decoder.queries"]),
    ("decoder layer 1", &["decoder.1."]),
    ("prediction head", &["head."]),
];

/// Index sets of every permutation of `0..n`, lexicographic.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Points within `r` of `center`, ascending, by direct scan.
pub fn brute_sphere(center: [f64; 3], positions: &[[f64; 3]], r: f64) -> Vec<usize> {
    (0..positions.len())
        .filter(|&i| {
            let d: f64 = (0..3).map(|a| (positions[i][a] - center[a]).powi(2)).sum();
            d <= r * r
        })
        .collect()
}
