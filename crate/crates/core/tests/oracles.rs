//! Library routines against brute-force references, plus property sweeps.

mod common;

use common::*;
use fanet::anchors::{generate_anchors, jaccard, match_anchors, BBox, BoxCoder};
use fanet::config::{AugmentConfig, DataConfig, InferenceConfig};
use fanet::data::{augment, generate_dataset, Bucket};
use fanet::eval::{evaluate_ap, IOU_THRESHOLD};
use fanet::inference::{nms, suppress, Detections};
use fanet::loss::hard_negative_mine;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEFAULT_SCALES: [f32; 6] = [16.0, 32.0, 64.0, 128.0, 256.0, 512.0];

#[test]
fn matching_equals_double_loop() {
    let coder = BoxCoder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for scales in [DEFAULT_SCALES, [4.0, 8.0, 16.0, 32.0, 64.0, 128.0]] {
        let anchors = generate_anchors(256, &scales).unwrap();
        for _ in 0..20 {
            let faces = random_faces(&mut rng, 256.0, 50);
            let thr = rng.gen_range(0.2..0.6);
            assert_eq!(match_anchors(&anchors, &faces, thr, &coder), match_oracle(&anchors, &faces, thr, &coder));
        }
    }
}

#[test]
fn every_face_keeps_a_positive() {
    let anchors = generate_anchors(256, &DEFAULT_SCALES).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let faces = random_faces(&mut rng, 256.0, 30);
        let m = match_anchors(&anchors, &faces, 0.35, &BoxCoder::default());
        let mut has = vec![false; faces.len()];
        for (_, f) in m.positives() {
            has[f as usize] = true;
        }
        // Duplicates share candidates but still get distinct forced anchors.
        assert!(has.iter().all(|&h| h));
    }
}

#[test]
fn nms_equals_quadratic_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let n = rng.gen_range(0..200);
        let (boxes, scores) = random_boxes(&mut rng, n, 256.0);
        let thr = rng.gen_range(0.1..0.7);
        assert_eq!(nms(&boxes, &scores, thr), nms_oracle(&boxes, &scores, thr));
    }
}

#[test]
fn nms_keeps_pairwise_overlap_below_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (boxes, scores) = random_boxes(&mut rng, 300, 256.0);
    let cfg = InferenceConfig::default();
    let kept = suppress(&Detections { boxes, scores }, &cfg);
    for i in 0..kept.len() {
        for j in i + 1..kept.len() {
            assert!(jaccard(&kept.boxes[i], &kept.boxes[j]) <= cfg.nms_threshold);
        }
        if i > 0 {
            assert!(kept.scores[i - 1] >= kept.scores[i]);
        }
    }
}

#[test]
fn ap_equals_brute_force() {
    let data = DataConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let (dets, gts) = random_ap_instance(&mut rng, 3);
        for bucket in [None, Some(Bucket::Easy), Some(Bucket::Medium), Some(Bucket::Hard)] {
            let got = evaluate_ap(&dets, &gts, IOU_THRESHOLD, bucket, &data).map(|c| c.ap);
            assert_eq!(got, ap_oracle(&dets, &gts, IOU_THRESHOLD, bucket, &data));
        }
    }
}

#[test]
fn ap_hand_walk() {
    let data = DataConfig::default();
    let gt = BBox::new(0.0, 0.0, 40.0, 40.0);
    let d = Detections {
        boxes: vec![gt, BBox::new(100.0, 100.0, 140.0, 140.0)],
        scores: vec![0.9, 0.8],
    };
    let c = evaluate_ap(&[d], &[vec![gt]], IOU_THRESHOLD, None, &data).unwrap();
    assert_eq!(c.precision, vec![1.0, 0.5]);
    assert_eq!(c.ap, 1.0);
}

#[test]
fn mining_equals_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..300 {
        let n = rng.gen_range(1..400);
        let labels: Vec<Option<u32>> = (0..n).map(|_| rng.gen_bool(0.05).then_some(0)).collect();
        // Coarse values force plenty of ties.
        let loss: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..30) as f64) / 7.0).collect();
        assert_eq!(hard_negative_mine(&loss, &labels, 3), mining_oracle(&loss, &labels, 3));
    }
}

#[test]
fn augmented_samples_stay_valid() {
    let data = DataConfig::default();
    let cfg = AugmentConfig::default();
    let samples = generate_dataset(5, 20, &data);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..2000 {
        let s = &samples[i % samples.len()];
        let a = augment(s, &cfg, 128, &mut rng);
        assert_eq!((a.image.width, a.image.height), (128, 128));
        assert!(a.faces.len() <= s.faces.len());
        for f in &a.faces {
            assert!(f.is_valid() && f.xmin >= 0.0 && f.ymin >= 0.0 && f.xmax <= 128.0 && f.ymax <= 128.0, "{f:?}");
        }
    }
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0f32..200.0, 0.0f32..200.0, 1.0f32..80.0, 1.0f32..80.0).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn jaccard_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let (p, q) = (jaccard(&a, &b), jaccard(&b, &a));
        prop_assert_eq!(p, q);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
    }

    #[test]
    fn encode_decode_round_trip(a in arb_box(), f in arb_box()) {
        let c = BoxCoder::default();
        let back = c.decode(&a, &c.encode(&a, &f));
        for (x, y) in [(back.xmin, f.xmin), (back.ymin, f.ymin), (back.xmax, f.xmax), (back.ymax, f.ymax)] {
            prop_assert!((x - y).abs() < 1e-3, "{:?} vs {:?}", back, f);
        }
    }

    #[test]
    fn nms_ignores_input_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (boxes, _) = random_boxes(&mut rng, 40, 256.0);
        let scores: Vec<f32> = (0..40).map(|i| i as f32 / 40.0 + rng.gen_range(0.0..0.01)).collect();
        let kept: Vec<BBox> = nms(&boxes, &scores, 0.3).into_iter().map(|i| boxes[i]).collect();
        let mut perm: Vec<usize> = (0..40).collect();
        perm.reverse();
        let b2: Vec<BBox> = perm.iter().map(|&i| boxes[i]).collect();
        let s2: Vec<f32> = perm.iter().map(|&i| scores[i]).collect();
        let kept2: Vec<BBox> = nms(&b2, &s2, 0.3).into_iter().map(|i| b2[i]).collect();
        prop_assert_eq!(kept, kept2);
    }

    #[test]
    fn mining_ratio_bound(n in 1usize..300, pos in 0usize..20) {
        let labels: Vec<Option<u32>> = (0..n).map(|i| (i < pos).then_some(0)).collect();
        let loss: Vec<f64> = (0..n).map(|i| (i * 7 % 13) as f64).collect();
        let kept = hard_negative_mine(&loss, &labels, 3);
        let positives = pos.min(n);
        prop_assert_eq!(kept.len(), (3 * positives).min(n - positives));
        prop_assert!(kept.iter().all(|&i| labels[i].is_none()));
    }

    #[test]
    fn adding_top_scored_true_positive_never_lowers_ap(seed in 0u64..500) {
        let data = DataConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut dets, mut gts) = random_ap_instance(&mut rng, 2);
        let before = evaluate_ap(&dets, &gts, IOU_THRESHOLD, None, &data).map_or(0.0, |c| c.ap);
        let extra = BBox::new(300.0, 300.0, 340.0, 340.0);
        gts[0].push(extra);
        dets[0].boxes.push(extra);
        dets[0].scores.push(2.0);
        let after = evaluate_ap(&dets, &gts, IOU_THRESHOLD, None, &data).unwrap().ap;
        prop_assert!(after >= before - 1e-12, "{} -> {}", before, after);
    }
}
