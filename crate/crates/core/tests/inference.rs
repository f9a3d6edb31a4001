mod common;

use common::{micro_config, micro_scene};
use proptest::prelude::*;
use psgformer::decoder::LayerPrediction;
use psgformer::inference::{
    decode_rle, encode_rle, evaluate, final_score, iou_points, mask_score, predict, rank_instances, read_dump,
    write_dump, InferConfig, PointInstance, PredictionDump,
};
use psgformer::numerics::rng_from_seed;
use psgformer::scenegen::SuperpointPartition;
use psgformer::{Matrix, Model};
use rand::Rng;

#[test]
fn final_score_matches_direct_cube_root() {
    let mut rng = rng_from_seed(1000);
    for _ in 0..1000 {
        let (p, s, ms): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let direct = (p * s * ms).powf(1.0 / 3.0);
        assert!((final_score(p, s, ms) - direct).abs() < 1e-12);
    }
    assert_eq!(mask_score(&[0.5, 0.3, 0.0], &[1.0, 5.0, 2.0]), 0.0);
}

#[test]
fn mask_score_weights_by_size() {
    assert!((mask_score(&[0.9, 0.6, 0.1], &[1.0, 3.0, 10.0]) - (0.9 + 1.8) / 4.0).abs() < 1e-15);
}

fn prediction(k: usize, m: usize, seed: u64) -> LayerPrediction {
    let mut rng = rng_from_seed(seed);
    let mut class_probs = Matrix::zeros(k, 4);
    for r in 0..k {
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for (c, v) in raw.iter().enumerate() {
            class_probs.set(r, c, v / total);
        }
    }
    LayerPrediction {
        class_probs,
        iou_score: (0..k).map(|_| rng.random()).collect(),
        sp_mask: Matrix::new(k, m, (0..k * m).map(|_| rng.random()).collect()).unwrap(),
    }
}

fn chunked(n: usize, m: usize) -> SuperpointPartition {
    SuperpointPartition::from_assignment((0..n).map(|i| i * m / n).collect())
}

#[test]
fn duplicate_queries_are_all_kept() {
    let mut pred = prediction(3, 6, 4);
    // Make every query confidently real with a non-empty mask, then copy query 0 over query 2.
    for r in 0..3 {
        pred.class_probs.row_mut(r).copy_from_slice(&[0.7, 0.1, 0.1, 0.1]);
        pred.sp_mask.set(r, 0, 0.9);
    }
    let row: Vec<f64> = pred.sp_mask.row(0).to_vec();
    pred.sp_mask.row_mut(2).copy_from_slice(&row);
    pred.iou_score[2] = pred.iou_score[0];
    let out = rank_instances(&pred, &chunked(12, 6), &InferConfig::default());
    assert_eq!(out.len(), 3);
    let copies: Vec<_> = out.iter().filter(|i| i.query == 0 || i.query == 2).collect();
    assert_eq!(copies[0].final_score, copies[1].final_score);
    assert_eq!(copies[0].point_mask, copies[1].point_mask);
    assert!(copies[0].query < copies[1].query);
}

#[test]
fn ranking_is_sorted_and_respects_limits() {
    let partition = chunked(40, 8);
    for seed in 0..50 {
        let pred = prediction(10, 8, seed);
        let all = rank_instances(&pred, &partition, &InferConfig::default());
        assert!(all.windows(2).all(|w| w[0].final_score >= w[1].final_score));
        for inst in &all {
            assert_eq!(inst.point_mask, partition.propagate(&inst.sp_mask));
            assert!((0.0..=1.0).contains(&inst.final_score));
        }
        let top = rank_instances(
            &pred,
            &partition,
            &InferConfig {
                top_k: Some(3),
                min_score: 0.0,
            },
        );
        assert_eq!(top, all[..all.len().min(3)]);
        let floor = rank_instances(
            &pred,
            &partition,
            &InferConfig {
                top_k: None,
                min_score: 0.5,
            },
        );
        assert!(floor.iter().all(|i| i.final_score >= 0.5));
    }
}

#[test]
fn raising_a_score_never_lowers_its_rank() {
    let partition = chunked(40, 8);
    let mut rng = rng_from_seed(77);
    for seed in 0..100 {
        let pred = prediction(8, 8, seed);
        let before = rank_instances(&pred, &partition, &InferConfig::default());
        let Some(target) = before.get(rng.random_range(0..before.len().max(1))).map(|i| i.query) else {
            continue;
        };
        let mut raised = pred.clone();
        raised.iou_score[target] = (raised.iou_score[target] + rng.random_range(0.0..0.5)).min(1.0);
        let after = rank_instances(&raised, &partition, &InferConfig::default());
        let rank = |r: &[psgformer::inference::InstanceResult]| r.iter().position(|i| i.query == target).unwrap();
        assert!(rank(&after) <= rank(&before));
    }
}

#[test]
fn untrained_model_predicts_at_most_k() {
    let cfg = micro_config(3);
    let (model, store) = Model::init(&cfg).unwrap();
    let scene = micro_scene(3, &cfg);
    let out = predict(&model, &store, &scene, &InferConfig::default()).unwrap();
    assert!(out.len() <= cfg.decoder.k);
}

fn inst(class: usize, score: f64, mask: Vec<bool>) -> PointInstance {
    PointInstance { class, score, mask }
}

fn random_mask(n: usize, rng: &mut impl Rng) -> Vec<bool> {
    (0..n).map(|_| rng.random_bool(0.4)).collect()
}

#[test]
fn splitting_superpoints_leaves_ap_unchanged() {
    let mut rng = rng_from_seed(5);
    for _ in 0..20 {
        let m = 10;
        let n = 60;
        let coarse = chunked(n, m);
        // Each coarse superpoint split in two halves.
        let fine = SuperpointPartition::from_assignment((0..n).map(|i| 2 * (i * m / n) + (i % 2)).collect());
        let gt_sp: Vec<Vec<bool>> = (0..3).map(|_| random_mask(m, &mut rng)).collect();
        let pred_sp: Vec<Vec<bool>> = (0..5).map(|_| random_mask(m, &mut rng)).collect();
        let scores: Vec<f64> = (0..5).map(|_| rng.random()).collect();
        let classes: Vec<usize> = (0..5).map(|_| rng.random_range(0..2)).collect();
        let split = |mask: &[bool]| -> Vec<bool> { (0..2 * m).map(|s| mask[s / 2]).collect() };
        let build = |p: &SuperpointPartition, f: &dyn Fn(&[bool]) -> Vec<bool>| {
            let preds: Vec<_> = (0..5)
                .map(|i| inst(classes[i], scores[i], p.propagate(&f(&pred_sp[i]))))
                .collect();
            let gts: Vec<_> = (0..3).map(|i| inst(i % 2, 1.0, p.propagate(&f(&gt_sp[i])))).collect();
            evaluate(&[preds], &[gts], 2)
        };
        let a = build(&coarse, &|m| m.to_vec());
        let b = build(&fine, &split);
        assert_eq!(a, b);
    }
}

#[test]
fn scene_order_does_not_matter() {
    let mut rng = rng_from_seed(6);
    let scenes: Vec<(Vec<PointInstance>, Vec<PointInstance>)> = (0..4)
        .map(|_| {
            let gts: Vec<_> = (0..3).map(|i| inst(i % 3, 1.0, random_mask(30, &mut rng))).collect();
            let preds: Vec<_> = (0..4)
                .map(|_| inst(rng.random_range(0..3), rng.random(), random_mask(30, &mut rng)))
                .collect();
            (preds, gts)
        })
        .collect();
    let eval = |order: &[usize]| {
        let preds: Vec<_> = order.iter().map(|&i| scenes[i].0.clone()).collect();
        let gts: Vec<_> = order.iter().map(|&i| scenes[i].1.clone()).collect();
        evaluate(&preds, &gts, 3)
    };
    let a = eval(&[0, 1, 2, 3]);
    let b = eval(&[2, 0, 3, 1]);
    assert_eq!(a, b);
}

#[test]
fn duplicate_of_a_correct_prediction_never_helps() {
    let mut rng = rng_from_seed(8);
    for _ in 0..50 {
        // Disjoint gt masks, so the duplicate cannot match a second instance.
        let gts: Vec<_> = (0..3)
            .map(|k| {
                let mut mask = random_mask(40, &mut rng);
                mask.iter_mut().enumerate().for_each(|(i, m)| *m &= i % 3 == k);
                mask[k] = true;
                inst(0, 1.0, mask)
            })
            .collect();
        let mut preds: Vec<_> = (0..3)
            .map(|_| inst(0, rng.random_range(0.0..0.9), random_mask(40, &mut rng)))
            .collect();
        preds.push(inst(0, 0.95, gts[0].mask.clone()));
        let base = evaluate(&[preds.clone()], std::slice::from_ref(&gts), 1);
        preds.push(inst(0, 0.95, gts[0].mask.clone()));
        let dup = evaluate(&[preds], &[gts], 1);
        assert!(dup.map <= base.map && dup.ap50 <= base.ap50 && dup.ap25 <= base.ap25);
    }
}

#[test]
fn iou_example() {
    let a = [true, true, true, true, false, false];
    let b = [false, false, true, true, true, true];
    assert_eq!(iou_points(&a, &b), 2.0 / 6.0);
}

proptest! {
    #[test]
    fn final_score_is_monotone(p in 0.0f64..1.0, s in 0.0f64..1.0, ms in 0.0f64..1.0, d in 0.0f64..0.5) {
        let base = final_score(p, s, ms);
        prop_assert!(final_score((p + d).min(1.0), s, ms) >= base);
        prop_assert!(final_score(p, (s + d).min(1.0), ms) >= base);
        prop_assert!(final_score(p, s, (ms + d).min(1.0)) >= base);
    }

    #[test]
    fn ap_values_stay_in_unit_interval(seed in 0u64..5000) {
        let mut rng = rng_from_seed(seed);
        let gts: Vec<_> = (0..rng.random_range(1..4)).map(|i| inst(i % 2, 1.0, random_mask(20, &mut rng))).collect();
        let preds: Vec<_> = (0..rng.random_range(0..6))
            .map(|_| inst(rng.random_range(0..2), rng.random(), random_mask(20, &mut rng)))
            .collect();
        let r = evaluate(&[preds], &[gts], 2);
        for v in [r.map, r.ap50, r.ap25] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn rle_round_trips(mask in prop::collection::vec(any::<bool>(), 0..200)) {
        prop_assert_eq!(decode_rle(&encode_rle(&mask), mask.len()).unwrap(), mask);
    }

    #[test]
    fn dump_round_trips(seed in 0u64..1000) {
        let mut rng = rng_from_seed(seed);
        let n = rng.random_range(1..50);
        let dump = PredictionDump {
            scene: format!("scene_{seed}"),
            points: n,
            superpoints: rng.random_range(1..10),
            instances: (0..rng.random_range(0..5))
                .map(|_| inst(rng.random_range(0..3), rng.random(), random_mask(n, &mut rng)))
                .collect(),
        };
        let mut buf = Vec::new();
        write_dump(&mut buf, &dump).unwrap();
        prop_assert_eq!(read_dump(buf.as_slice()).unwrap(), dump);
    }
}
