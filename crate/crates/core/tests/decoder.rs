use proptest::prelude::*;
use psgformer::decoder::{build_attention_mask, run_decoder, Attention, Decoder, DecoderConfig, LayerPrediction};
use psgformer::numerics::{rng_from_seed, Linear};
use psgformer::{Graph, Matrix, ParamStore};
use rand::Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn affine(store: &ParamStore, l: &Linear, x: &Matrix) -> Matrix {
    let mut y = x.matmul(store.value(l.weight)).unwrap();
    let b = store.value(l.bias);
    for r in 0..y.rows() {
        for (v, bv) in y.row_mut(r).iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    y
}

/// Multi-head attention written with plain loops.
fn reference_attention(store: &ParamStore, a: &Attention, z: &Matrix, f: &Matrix, mask: Option<&Matrix>) -> Matrix {
    let q = affine(store, &a.q, z);
    let k = affine(store, &a.k, f);
    let v = affine(store, &a.v, f);
    let d = q.cols();
    let dh = d / a.heads;
    let mut cat = Matrix::zeros(z.rows(), d);
    for h in 0..a.heads {
        for i in 0..z.rows() {
            let logits: Vec<f64> = (0..f.rows())
                .map(|j| {
                    let dot: f64 = (0..dh).map(|c| q.get(i, h * dh + c) * k.get(j, h * dh + c)).sum();
                    dot / (dh as f64).sqrt() + mask.map_or(0.0, |m| m.get(i, j))
                })
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = e.iter().sum();
            for c in 0..dh {
                let val: f64 = (0..f.rows()).map(|j| e[j] / total * v.get(j, h * dh + c)).sum();
                cat.set(i, h * dh + c, val);
            }
        }
    }
    affine(store, &a.out, &cat)
}

fn attend(store: &ParamStore, a: &Attention, z: &Matrix, f: &Matrix, mask: Option<&Matrix>) -> (Matrix, Vec<Matrix>) {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let fv = g.constant(f.clone());
    let out = a.forward(&mut g, store, zv, fv, mask).unwrap();
    (g.value(out.output).clone(), out.weights)
}

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn attention_matches_loop_reference() {
    let mut store = ParamStore::new();
    let a = Attention::new(&mut store, "attn", 16, 4, 3).unwrap();
    let z = random(5, 16, 1);
    let f = random(9, 16, 2);
    let (out, _) = attend(&store, &a, &z, &f, None);
    assert!(close(&out, &reference_attention(&store, &a, &z, &f, None), 1e-12));
    let (self_out, _) = attend(&store, &a, &z, &z, None);
    assert!(close(&self_out, &reference_attention(&store, &a, &z, &z, None), 1e-12));
    let mask = build_attention_mask(&random(5, 9, 4), 0.0).values;
    let (masked, _) = attend(&store, &a, &z, &f, Some(&mask));
    assert!(close(
        &masked,
        &reference_attention(&store, &a, &z, &f, Some(&mask)),
        1e-12
    ));
}

#[test]
fn one_hot_mask_returns_projected_value() {
    let mut store = ParamStore::new();
    let a = Attention::new(&mut store, "attn", 8, 2, 5).unwrap();
    let z = random(3, 8, 6);
    let f = random(4, 8, 7);
    let mut mask = Matrix::filled(3, 4, f64::NEG_INFINITY);
    for (i, j) in [(0, 2), (1, 0), (2, 2)] {
        mask.set(i, j, 0.0);
    }
    let (out, weights) = attend(&store, &a, &z, &f, Some(&mask));
    let v = affine(&store, &a.v, &f);
    let projected = affine(&store, &a.out, &v);
    for (i, j) in [(0, 2), (1, 0), (2, 2)] {
        for w in &weights {
            for c in 0..4 {
                assert_eq!(w.get(i, c), if c == j { 1.0 } else { 0.0 });
            }
        }
        for c in 0..8 {
            assert!((out.get(i, c) - projected.get(j, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_mask_equals_unmasked() {
    let mut store = ParamStore::new();
    let a = Attention::new(&mut store, "attn", 8, 4, 8).unwrap();
    let z = random(3, 8, 9);
    let f = random(6, 8, 10);
    let (plain, _) = attend(&store, &a, &z, &f, None);
    let (zero, _) = attend(&store, &a, &z, &f, Some(&Matrix::zeros(3, 6)));
    assert_eq!(plain, zero);
}

#[test]
fn hand_evaluated_softmax() {
    let mut store = ParamStore::new();
    let a = Attention::new(&mut store, "attn", 2, 1, 0).unwrap();
    for l in [&a.q, &a.k, &a.v, &a.out] {
        *store.value_mut(l.weight) = Matrix::identity(2);
        *store.value_mut(l.bias) = Matrix::zeros(1, 2);
    }
    let z = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
    let f = Matrix::from_rows(&[[0.5, 0.0], [0.0, 1.0]]).unwrap();
    let (out, weights) = attend(&store, &a, &z, &f, None);
    // Logits 0.5 / sqrt 2 and 2 / sqrt 2.
    let (l1, l2) = (0.5 / 2f64.sqrt(), 2.0 / 2f64.sqrt());
    let w1 = l1.exp() / (l1.exp() + l2.exp());
    assert!((weights[0].get(0, 0) - w1).abs() < 1e-15);
    assert!((weights[0].get(0, 1) - (1.0 - w1)).abs() < 1e-15);
    assert!((out.get(0, 0) - 0.5 * w1).abs() < 1e-15);
    assert!((out.get(0, 1) - (1.0 - w1)).abs() < 1e-15);
}

#[test]
fn permuting_queries_permutes_outputs() {
    let mut store = ParamStore::new();
    let a = Attention::new(&mut store, "self", 8, 2, 11).unwrap();
    let z = random(5, 8, 12);
    let order = [3, 0, 4, 1, 2];
    let permuted = Matrix::from_rows(&order.map(|i| z.row(i).to_vec())).unwrap();
    let (out, _) = attend(&store, &a, &z, &z, None);
    let (pout, _) = attend(&store, &a, &permuted, &permuted, None);
    for (r, &i) in order.iter().enumerate() {
        for c in 0..8 {
            assert!((pout.get(r, c) - out.get(i, c)).abs() < 1e-12);
        }
    }
}

fn decoder(cfg: &DecoderConfig, local: usize, seed: u64) -> (Decoder, ParamStore) {
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, cfg, local, seed).unwrap();
    (dec, store)
}

fn small_cfg() -> DecoderConfig {
    DecoderConfig {
        k: 6,
        d: 16,
        layers: 3,
        heads: 4,
        ..DecoderConfig::default()
    }
}

#[test]
fn decoder_is_query_permutation_equivariant() {
    let cfg = small_cfg();
    let (dec, mut store) = decoder(&cfg, 8, 21);
    let f_g = random(12, 16, 22);
    let f_l = random(5, 8, 23);
    let s_mask = random(12, 16, 24);
    let base = run_decoder(&dec, &store, Some(&f_g), Some(&f_l), &s_mask).unwrap();
    let order = [5, 2, 0, 4, 1, 3];
    let q = store.value(dec.queries).clone();
    *store.value_mut(dec.queries) = Matrix::from_rows(&order.map(|i| q.row(i).to_vec())).unwrap();
    let moved = run_decoder(&dec, &store, Some(&f_g), Some(&f_l), &s_mask).unwrap();
    for (b, m) in base.iter().zip(&moved) {
        for (r, &i) in order.iter().enumerate() {
            assert!((b.iou_score[i] - m.iou_score[r]).abs() < 1e-12);
            for c in 0..b.class_probs.cols() {
                assert!((b.class_probs.get(i, c) - m.class_probs.get(r, c)).abs() < 1e-12);
            }
            for c in 0..12 {
                assert!((b.sp_mask.get(i, c) - m.sp_mask.get(r, c)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn splitting_every_superpoint_duplicates_mask_columns() {
    let cfg = small_cfg();
    let (dec, store) = decoder(&cfg, 8, 31);
    let f_g = random(7, 16, 32);
    let f_l = random(4, 8, 33);
    let s_mask = random(7, 16, 34);
    let double =
        |m: &Matrix| Matrix::from_rows(&(0..2 * m.rows()).map(|r| m.row(r / 2).to_vec()).collect::<Vec<_>>()).unwrap();
    let base = run_decoder(&dec, &store, Some(&f_g), Some(&f_l), &s_mask).unwrap();
    let split = run_decoder(&dec, &store, Some(&double(&f_g)), Some(&f_l), &double(&s_mask)).unwrap();
    for (b, s) in base.iter().zip(&split) {
        for i in 0..cfg.k {
            for c in 0..14 {
                assert!((s.sp_mask.get(i, c) - b.sp_mask.get(i, c / 2)).abs() < 1e-12);
            }
        }
    }
}

fn checksum(preds: &[LayerPrediction]) -> f64 {
    preds
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let w = (l + 1) as f64;
            w * (p.class_probs.sum() * 0.5 + p.iou_score.iter().sum::<f64>() + p.sp_mask.sum() * 0.25)
        })
        .sum()
}

#[test]
fn golden_checksum() {
    let cfg = DecoderConfig {
        k: 8,
        d: 32,
        layers: 2,
        heads: 4,
        ..DecoderConfig::default()
    };
    let (dec, store) = decoder(&cfg, 16, 2024);
    let preds = run_decoder(
        &dec,
        &store,
        Some(&random(20, 32, 1)),
        Some(&random(10, 16, 2)),
        &random(20, 32, 3),
    )
    .unwrap();
    let sum = checksum(&preds);
    assert!((sum - GOLDEN).abs() < 1e-9, "checksum {sum:.12}");
}

const GOLDEN: f64 = 184.348814839631;

#[test]
fn mask_threshold_is_inclusive_and_monotone() {
    let prev = Matrix::from_rows(&[[0.5, 0.4999999, 0.9], [0.1, 0.2, 0.3]]).unwrap();
    let a = build_attention_mask(&prev, 0.5);
    assert_eq!(a.values.row(0), &[0.0, f64::NEG_INFINITY, 0.0]);
    assert_eq!(a.values.row(1), &[0.0, 0.0, 0.0]);
    assert_eq!(a.fallback_rows, vec![1]);
}

proptest! {
    #[test]
    fn masked_attention_is_finite_and_normalised(
        prev in prop::collection::vec(prop::sample::select(vec![0.0, 0.0, 0.2, 0.5, 0.7, 1.0]), 4 * 6),
        seed in 0u64..500,
    ) {
        let prev = Matrix::new(4, 6, prev).unwrap();
        let mask = build_attention_mask(&prev, 0.5);
        let mut store = ParamStore::new();
        let a = Attention::new(&mut store, "attn", 8, 2, seed).unwrap();
        let (out, weights) = attend(&store, &a, &random(4, 8, seed), &random(6, 8, seed + 1), Some(&mask.values));
        prop_assert!(out.is_finite());
        for w in &weights {
            for i in 0..4 {
                prop_assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for j in 0..6 {
                    if mask.values.get(i, j) == f64::NEG_INFINITY {
                        prop_assert_eq!(w.get(i, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn larger_prev_never_closes_an_entry(
        prev in prop::collection::vec(0.0f64..1.0, 12),
        bump in prop::collection::vec(0.0f64..0.5, 12),
    ) {
        let lo = Matrix::new(3, 4, prev.clone()).unwrap();
        let hi = Matrix::new(3, 4, prev.iter().zip(&bump).map(|(p, b)| p + b).collect()).unwrap();
        let a = build_attention_mask(&lo, 0.5);
        let b = build_attention_mask(&hi, 0.5);
        for r in 0..3 {
            if a.fallback_rows.contains(&r) || b.fallback_rows.contains(&r) {
                continue;
            }
            for c in 0..4 {
                prop_assert!(!(a.values.get(r, c) == 0.0 && b.values.get(r, c) != 0.0));
            }
        }
    }
}
