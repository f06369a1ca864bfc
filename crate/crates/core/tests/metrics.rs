mod common;

use cenet::metrics::*;
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_pair(r: &mut rand_chacha::ChaCha8Rng, n: usize, c: u32, ignore: u32) -> (Vec<u32>, Vec<u32>) {
    let gt = (0..n).map(|_| if r.gen_bool(0.1) { ignore } else { r.gen_range(0..c) }).collect();
    // mostly right, sometimes a different class, rarely out of range
    let pred = (0..n)
        .map(|i: usize| {
            let roll: f64 = r.gen();
            if roll < 0.02 {
                c + 3
            } else if roll < 0.5 {
                r.gen_range(0..c)
            } else {
                i as u32 % c
            }
        })
        .collect();
    (pred, gt)
}

fn matrix(cm: &ConfusionMatrix) -> Vec<Vec<u64>> {
    let c = cm.num_classes();
    (0..c).map(|g| (0..=c).map(|p| cm.get(g, p)).collect()).collect()
}

#[test]
fn perfect_prediction_fills_the_diagonal() {
    let gt: Vec<u32> = (0..100).map(|i| i % 4).collect();
    let mut cm = ConfusionMatrix::new(4, 99);
    cm.accumulate(&gt, &gt).unwrap();
    for g in 0..4 {
        for p in 0..5 {
            assert_eq!(cm.get(g, p), if g == p { 25 } else { 0 });
        }
    }
    let rep = cm.iou();
    assert!(rep.per_class.iter().all(|v| *v == Some(1.0)));
    assert_eq!(rep.miou, Some(1.0));
}

#[test]
fn ignored_ground_truth_is_neutral() {
    let mut cm = ConfusionMatrix::new(3, 0);
    cm.accumulate(&[1, 2, 1], &[0, 0, 0]).unwrap();
    assert_eq!(cm.total(), 0);
    assert_eq!(cm.iou().miou, None);
}

#[test]
fn fully_wrong_two_class_matrix_scores_zero() {
    let mut cm = ConfusionMatrix::new(2, 99);
    cm.accumulate(&[1, 1, 0, 0], &[0, 0, 1, 1]).unwrap();
    let rep = cm.iou();
    assert_eq!(rep.per_class, vec![Some(0.0), Some(0.0)]);
    assert_eq!(rep.miou, Some(0.0));
}

#[test]
fn three_class_hand_computed() {
    // gt\pred   0  1  2
    //   0       3  1  0
    //   1       0  2  2
    //   2       1  0  4
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (g, row) in [[3, 1, 0], [0, 2, 2], [1, 0, 4]].iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                pred.push(p as u32);
                gt.push(g as u32);
            }
        }
    }
    let mut cm = ConfusionMatrix::new(3, 99);
    cm.accumulate(&pred, &gt).unwrap();
    let rep = cm.iou();
    let want = [3.0 / (3.0 + 1.0 + 1.0), 2.0 / (2.0 + 1.0 + 2.0), 4.0 / (4.0 + 2.0 + 1.0)];
    for k in 0..3 {
        assert_eq!(rep.per_class[k], Some(want[k]));
    }
    assert!((rep.miou.unwrap() - want.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert_eq!(cm.accuracy(), Some(9.0 / 13.0));
}

#[test]
fn zero_support_and_ignore_classes_leave_the_mean() {
    let mut cm = ConfusionMatrix::new(4, 0);
    cm.accumulate(&[1, 1, 2], &[1, 1, 2]).unwrap();
    let rep = cm.iou();
    assert_eq!(rep.per_class, vec![None, Some(1.0), Some(1.0), None]);
    assert_eq!(rep.miou, Some(1.0));
}

#[test]
fn unlabeled_predictions_are_misses_only() {
    let mut cm = ConfusionMatrix::new(2, 99);
    cm.accumulate(&[0, 7], &[0, 0]).unwrap();
    assert_eq!(cm.get(0, 2), 1);
    assert_eq!(cm.iou().per_class, vec![Some(0.5), None]);
}

#[test]
fn bad_inputs_are_consistency_errors() {
    let mut cm = ConfusionMatrix::new(3, 99);
    assert!(matches!(cm.accumulate(&[0, 1], &[0]), Err(cenet::Error::Consistency(_))));
    assert!(matches!(cm.accumulate(&[0], &[5]), Err(cenet::Error::Consistency(_))));
    assert!(cm.merge(&ConfusionMatrix::new(4, 99)).is_err());
    assert!(cm.merge(&ConfusionMatrix::new(3, 1)).is_err());
}

#[test]
fn random_pairs_match_the_tally_oracle_exactly() {
    let mut r = seeded(20);
    for _ in 0..100 {
        let c = r.gen_range(2..8);
        let ignore = if r.gen_bool(0.5) { 0 } else { 255 };
        let n = r.gen_range(1..600);
        let (pred, gt) = random_pair(&mut r, n, c, ignore);
        let mut cm = ConfusionMatrix::new(c as usize, ignore);
        cm.accumulate(&pred, &gt).unwrap();
        let m = tally_oracle(&pred, &gt, c as usize, ignore);
        assert_eq!(matrix(&cm), m);
        let (per, miou) = iou_oracle(&m, ignore);
        let rep = cm.iou();
        assert_eq!(rep.per_class, per);
        assert_eq!(rep.miou, miou);
    }
}

#[test]
fn accumulation_is_batching_invariant() {
    let mut r = seeded(21);
    let (c, ignore) = (6u32, 0u32);
    let scans: Vec<(Vec<u32>, Vec<u32>)> = (0..40)
        .map(|_| {
            let n = r.gen_range(10..300);
            random_pair(&mut r, n, c, ignore)
        })
        .collect();
    let mut whole = ConfusionMatrix::new(c as usize, ignore);
    for (p, g) in &scans {
        whole.accumulate(p, g).unwrap();
    }
    for _ in 0..10 {
        let mut order: Vec<usize> = (0..scans.len()).collect();
        order.shuffle(&mut r);
        let mut shards: Vec<ConfusionMatrix> = (0..r.gen_range(1..7)).map(|_| ConfusionMatrix::new(c as usize, ignore)).collect();
        let k = shards.len();
        for i in order {
            shards[r.gen_range(0..k)].accumulate(&scans[i].0, &scans[i].1).unwrap();
        }
        let mut merged = ConfusionMatrix::new(c as usize, ignore);
        for s in &shards {
            merged.merge(s).unwrap();
        }
        assert_eq!(merged, whole);
        assert_eq!(merged.iou(), whole.iou());
    }
}

proptest! {
    #[test]
    fn merge_is_associative_and_commutative(seed in any::<u64>()) {
        let mut r = seeded(seed);
        let mut parts: Vec<ConfusionMatrix> = Vec::new();
        for _ in 0..3 {
            let n = r.gen_range(0..200);
            let (p, g) = random_pair(&mut r, n, 5, 255);
            let mut cm = ConfusionMatrix::new(5, 255);
            cm.accumulate(&p, &g).unwrap();
            parts.push(cm);
        }
        let (a, b, c) = (&parts[0], &parts[1], &parts[2]);
        let mut ab_c = a.clone();
        ab_c.merge(b).unwrap();
        ab_c.merge(c).unwrap();
        let mut bc = b.clone();
        bc.merge(c).unwrap();
        let mut a_bc = a.clone();
        a_bc.merge(&bc).unwrap();
        let mut ba = b.clone();
        ba.merge(a).unwrap();
        let mut ab = a.clone();
        ab.merge(b).unwrap();
        prop_assert_eq!(&ab_c, &a_bc);
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn iou_is_bounded(seed in any::<u64>(), n in 1usize..400) {
        let mut r = seeded(seed);
        let (p, g) = random_pair(&mut r, n, 4, 0);
        let mut cm = ConfusionMatrix::new(4, 0);
        cm.accumulate(&p, &g).unwrap();
        let rep = cm.iou();
        for v in rep.per_class.iter().flatten() {
            prop_assert!((0.0..=1.0).contains(v));
        }
        if let Some(m) = rep.miou {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}
