mod common;

use cenet::loss::*;
use cenet::model::AuxMode;
use common::*;
use ndarray::{Array2, Array3, ArrayView3};
use rand::Rng;

// ---------------------------------------------------------------- values

#[test]
fn uniform_logits_give_log_c() {
    for c in [2usize, 4, 20] {
        let logits = Array3::zeros((c, 3, 5));
        let target = Array2::from_shape_fn((3, 5), |(i, j)| ((i + j) % c) as u32);
        let v = weighted_cross_entropy(&logits.view(), &target.view(), &cfg_ignore(999)).unwrap();
        assert!((v.value - (c as f64).ln()).abs() <= 1e-6);
    }
}

#[test]
fn saturated_logits_give_near_zero_wce() {
    let target = Array2::from_shape_fn((4, 4), |(i, j)| ((i * 4 + j) % 3) as u32);
    let logits = Array3::from_shape_fn((3, 4, 4), |(k, i, j)| if target[[i, j]] == k as u32 { 20.0 } else { 0.0 });
    let v = weighted_cross_entropy(&logits.view(), &target.view(), &cfg_ignore(999)).unwrap();
    assert!(v.value <= 1e-6);
}

#[test]
fn wce_matches_scalar_loop() {
    let mut r = rng(1);
    for _ in 0..10 {
        let logits = random_logits(&mut r, 3, 4, 4);
        let mut target = random_target(&mut r, 3, 4, 4);
        target[[0, 0]] = 7;
        let cfg = LossConfig {
            class_weights: vec![1.0, 2.0, 3.0],
            ignore_id: 7,
            ..LossConfig::default()
        };
        let got = weighted_cross_entropy(&logits.view(), &target.view(), &cfg).unwrap().value;
        let want = wce_oracle(&logits, &target, &[1.0, 2.0, 3.0], 7);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn all_ignored_is_flagged_zero() {
    let logits = Array3::zeros((3, 2, 2));
    let target = Array2::from_elem((2, 2), 9u32);
    let cfg = cfg_ignore(9);
    let w = weighted_cross_entropy(&logits.view(), &target.view(), &cfg).unwrap();
    assert_eq!(w.value, 0.0);
    assert!(w.flags.all_ignored);
    let p = softmax(&logits.view());
    let l = lovasz_softmax(&p.view(), &target.view(), &cfg).unwrap();
    assert_eq!(l.value, 0.0);
    assert!(l.flags.no_present_class);
}

#[test]
fn lovasz_zero_for_perfect_probs() {
    let mut r = rng(2);
    let target = random_target(&mut r, 4, 5, 6);
    let probs = one_hot(&target.view(), 4, 99);
    let v = lovasz_softmax(&probs.view(), &target.view(), &cfg_ignore(99)).unwrap();
    assert!(v.value.abs() <= 1e-12);
}

#[test]
fn lovasz_single_pixel_matches_enumeration() {
    let target = Array2::from_elem((1, 1), 1u32);
    for p1 in [0.0, 0.3, 0.5, 0.9] {
        let probs = Array3::from_shape_vec((2, 1, 1), vec![1.0 - p1, p1]).unwrap();
        let got = lovasz_softmax(&probs.view(), &target.view(), &cfg_ignore(9)).unwrap().value;
        let want = lovasz_oracle(&probs, &target, 9);
        assert!((got - want).abs() < 1e-12);
        // single foreground pixel: the extension is just its error
        assert!((got - (1.0 - p1)).abs() < 1e-12);
    }
}

#[test]
fn lovasz_matches_enumeration_on_small_images() {
    let mut r = rng(3);
    for case in 0..30 {
        let (h, w) = if case % 2 == 0 { (3, 3) } else { (3, 4) };
        let logits = random_logits(&mut r, 3, h, w);
        let probs = softmax(&logits.view());
        let mut target = random_target(&mut r, 3, h, w);
        if case % 3 == 0 {
            target[[1, 1]] = 5;
        }
        let got = lovasz_softmax(&probs.view(), &target.view(), &cfg_ignore(5)).unwrap().value;
        let want = lovasz_oracle(&probs, &target, 5);
        assert!((got - want).abs() < 1e-12, "case {case}: {got} vs {want}");
    }
}

#[test]
fn boundary_map_of_constant_is_zero() {
    let y = Array3::from_elem((2, 4, 5), 0.3);
    assert!(boundary_map(&y.view(), 3).iter().all(|v| v.abs() < 1e-15));
    let mut r = rng(4);
    let y = Array3::from_shape_fn((2, 4, 5), |_| r.gen::<f64>());
    assert!(boundary_map(&y.view(), 1).iter().all(|&v| v == 0.0));
}

#[test]
fn boundary_map_block_matches_sliding_window() {
    let mut y = Array3::zeros((1, 5, 5));
    for (i, j) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
        y[[0, i, j]] = 1.0;
    }
    let got = boundary_map(&y.view(), 3);
    assert_eq!(got, boundary_oracle(&y, 3));
    // the foreground block itself is the ring of the complement's dilation
    for i in 0..5 {
        for j in 0..5 {
            let expected = if y[[0, i, j]] == 1.0 { 1.0 } else { 0.0 };
            assert_eq!(got[[0, i, j]], expected, "({i},{j})");
        }
    }
    // large uniform region: far background pixels are 0
    let mut big = Array3::zeros((1, 9, 9));
    big[[0, 4, 4]] = 1.0;
    let b = boundary_map(&big.view(), 3);
    assert_eq!(b[[0, 0, 0]], 0.0);
    assert_eq!(b[[0, 4, 4]], 1.0);
}

#[test]
fn boundary_loss_anchors() {
    let mut r = rng(5);
    let target = random_target(&mut r, 3, 6, 6);
    let onehot = one_hot(&target.view(), 3, 99);
    let same = boundary_loss(&onehot.view(), &onehot.view(), &cfg_ignore(99)).unwrap();
    assert!(same.value.abs() <= 1e-6, "{}", same.value);

    // two vertical splits far apart: boundaries at columns 1-2 vs 5-6
    let gt = Array3::from_shape_fn((2, 8, 8), |(k, _, j)| if (j < 2) == (k == 0) { 1.0 } else { 0.0 });
    let pred = Array3::from_shape_fn((2, 8, 8), |(k, _, j)| if (j < 6) == (k == 0) { 1.0 } else { 0.0 });
    let pb = boundary_map(&pred.view(), 3);
    let gb = boundary_map(&gt.view(), 3);
    assert!(pb.iter().zip(gb.iter()).all(|(a, b)| a * b == 0.0), "maps must be disjoint");
    let v = boundary_loss(&pred.view(), &gt.view(), &cfg_ignore(99)).unwrap();
    assert!((v.value - 1.0).abs() < 1e-12);
}

#[test]
fn boundary_loss_matches_scalar_reference() {
    let mut r = rng(6);
    for _ in 0..10 {
        let probs = softmax(&random_logits(&mut r, 2, 6, 6).view());
        let target = random_target(&mut r, 2, 6, 6);
        let gt = one_hot(&target.view(), 2, 99);
        let got = boundary_loss(&probs.view(), &gt.view(), &cfg_ignore(99)).unwrap().value;
        let want = boundary_loss_oracle(&probs, &gt, 3, None);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // the ignore channel is skipped
        let got0 = boundary_loss(&probs.view(), &gt.view(), &cfg_ignore(0)).unwrap().value;
        assert!((got0 - boundary_loss_oracle(&probs, &gt, 3, Some(0))).abs() < 1e-12);
    }
}

#[test]
fn single_class_scene_has_no_boundary() {
    let target = Array2::from_elem((4, 4), 1u32);
    let logits = Array3::zeros((3, 4, 4));
    let (_, _, flags) = main_loss(&logits.view(), &target.view(), &cfg_ignore(99)).unwrap();
    assert!(flags.no_boundary);
}

#[test]
fn weighted_combination() {
    let cfg = LossConfig::default();
    assert_eq!((cfg.alpha, cfg.beta, cfg.gamma, cfg.theta0), (1.0, 1.5, 1.0, 3));
    assert_eq!(MainTerms::combine(1.0, 1.0, 1.0, &cfg).main, 3.5);

    let mut r = rng(7);
    let logits = random_logits(&mut r, 3, 5, 6);
    let target = random_target(&mut r, 3, 5, 6);
    let cfg = cfg_ignore(99);
    let (t, _, _) = main_loss(&logits.view(), &target.view(), &cfg).unwrap();
    let wce = weighted_cross_entropy(&logits.view(), &target.view(), &cfg).unwrap().value;
    let probs = softmax(&logits.view());
    let lov = lovasz_softmax(&probs.view(), &target.view(), &cfg).unwrap().value;
    let bd = boundary_loss(&probs.view(), &one_hot(&target.view(), 3, 99).view(), &cfg).unwrap().value;
    assert!((t.main - (wce + 1.5 * lov + bd)).abs() < 1e-12);

    let only_wce = LossConfig {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
        ..cfg.clone()
    };
    let (t, _, _) = main_loss(&logits.view(), &target.view(), &only_wce).unwrap();
    assert_eq!(t.main, t.wce);
}

#[test]
fn lambda_zero_total_equals_main() {
    let mut r = rng(8);
    let logits = random_logits(&mut r, 3, 4, 8);
    let aux: Vec<Array3<f64>> = (0..3).map(|_| random_logits(&mut r, 3, 4, 8)).collect();
    let target = random_target(&mut r, 3, 4, 8);
    let cfg = LossConfig {
        lambda_aux: 0.0,
        ..cfg_ignore(99)
    };
    let views: Vec<(usize, ArrayView3<f64>)> = aux.iter().map(|a| (1, a.view())).collect();
    let (b, _, _) = total_loss(&logits.view(), &views, &target.view(), &cfg, AuxMode::PlanB).unwrap();
    assert_eq!(b.total, b.main);
}

#[test]
fn identical_aux_branches_scale_main() {
    let mut r = rng(9);
    let logits = random_logits(&mut r, 3, 4, 8);
    let target = random_target(&mut r, 3, 4, 8);
    for lambda in [0.1, 0.5, 1.0] {
        let cfg = LossConfig {
            lambda_aux: lambda,
            ..cfg_ignore(99)
        };
        let views = vec![(1, logits.view()); 3];
        let (b, _, _) = total_loss(&logits.view(), &views, &target.view(), &cfg, AuxMode::PlanB).unwrap();
        assert!(b.aux_terms.iter().all(|&t| t == b.main));
        assert!((b.total - b.main * (1.0 + 3.0 * lambda)).abs() <= 1e-12 * b.total.abs());
    }
}

#[test]
fn plan_a_uses_nearest_downsampled_targets() {
    let target = Array2::from_shape_fn((4, 8), |(i, j)| ((i * 8 + j) % 3) as u32);
    let d = downsample_labels(&target.view(), 2);
    assert_eq!(d.dim(), (2, 4));
    for i in 0..2 {
        for j in 0..4 {
            assert_eq!(d[[i, j]], target[[2 * i, 2 * j]]);
        }
    }
    let mut r = rng(10);
    let main = random_logits(&mut r, 3, 4, 8);
    let aux = random_logits(&mut r, 3, 2, 4);
    let cfg = cfg_ignore(99);
    let (b, _, _) = total_loss(&main.view(), &[(2, aux.view())], &target.view(), &cfg, AuxMode::PlanA).unwrap();
    let (direct, _, _) = main_loss(&aux.view(), &d.view(), &cfg).unwrap();
    assert_eq!(b.aux_terms[0], direct.main);
}

#[test]
fn aux_mismatch_is_rejected() {
    let logits = Array3::zeros((3, 2, 2));
    let target = Array2::zeros((2, 2));
    let cfg = cfg_ignore(99);
    assert!(total_loss(&logits.view(), &[(1, logits.view())], &target.view(), &cfg, AuxMode::None).is_err());
    assert!(total_loss(&logits.view(), &[(2, logits.view())], &target.view(), &cfg, AuxMode::PlanB).is_err());
}

#[test]
fn ignored_pixels_do_not_move_wce_or_lovasz() {
    let mut r = rng(11);
    let logits = random_logits(&mut r, 3, 4, 6);
    let mut target = random_target(&mut r, 3, 4, 6);
    target[[0, 0]] = 9;
    target[[2, 3]] = 9;
    let cfg = cfg_ignore(9);
    let mut perturbed = logits.clone();
    for k in 0..3 {
        perturbed[[k, 0, 0]] += r.gen_range(-5.0..5.0);
        perturbed[[k, 2, 3]] += r.gen_range(-5.0..5.0);
    }
    let a = weighted_cross_entropy(&logits.view(), &target.view(), &cfg).unwrap().value;
    let b = weighted_cross_entropy(&perturbed.view(), &target.view(), &cfg).unwrap().value;
    assert_eq!(a, b);
    let pa = softmax(&logits.view());
    let pb = softmax(&perturbed.view());
    let la = lovasz_softmax(&pa.view(), &target.view(), &cfg).unwrap().value;
    let lb = lovasz_softmax(&pb.view(), &target.view(), &cfg).unwrap().value;
    assert_eq!(la, lb);
}

#[test]
fn out_of_range_label_is_rejected() {
    let logits = Array3::zeros((3, 2, 2));
    let target = Array2::from_elem((2, 2), 3u32);
    assert!(weighted_cross_entropy(&logits.view(), &target.view(), &cfg_ignore(99)).is_err());
}

// ---------------------------------------------------------------- gradients

fn weights_only(alpha: f64, beta: f64, gamma: f64, ignore: u32) -> LossConfig {
    LossConfig {
        alpha,
        beta,
        gamma,
        class_weights: vec![0.7, 1.3, 2.1],
        ..cfg_ignore(ignore)
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(12);
    for case in 0..5 {
        let logits = random_logits(&mut r, 3, 4, 6);
        let mut target = random_target(&mut r, 3, 4, 6);
        let ignore = if case % 2 == 0 { 9 } else { 0 };
        if ignore == 9 {
            target[[1, 2]] = 9;
        }
        for (name, cfg) in [
            ("wce", weights_only(1.0, 0.0, 0.0, ignore)),
            ("lovasz", weights_only(0.0, 1.0, 0.0, ignore)),
            ("boundary", weights_only(0.0, 0.0, 1.0, ignore)),
            ("main", weights_only(1.0, 1.5, 1.0, ignore)),
        ] {
            let (_, g, _) = main_loss(&logits.view(), &target.view(), &cfg).unwrap();
            let f = |x: &Array3<f64>| main_loss(&x.view(), &target.view(), &cfg).unwrap().0.main;
            let err = max_rel_error(&g, &f, &logits);
            assert!(err <= FD_TOL, "case {case} {name}: relative error {err:e}");
        }
    }
}

#[test]
fn total_gradient_matches_finite_differences() {
    let mut r = rng(13);
    let main = random_logits(&mut r, 3, 4, 6);
    let aux: Vec<Array3<f64>> = (0..3).map(|_| random_logits(&mut r, 3, 4, 6)).collect();
    let target = random_target(&mut r, 3, 4, 6);
    let cfg = LossConfig {
        lambda_aux: 0.5,
        ..weights_only(1.0, 1.5, 1.0, 99)
    };
    let total = |m: &Array3<f64>, a: &[Array3<f64>]| {
        let v: Vec<(usize, ArrayView3<f64>)> = a.iter().map(|x| (1, x.view())).collect();
        total_loss(&m.view(), &v, &target.view(), &cfg, AuxMode::PlanB).unwrap().0.total
    };
    let views: Vec<(usize, ArrayView3<f64>)> = aux.iter().map(|x| (1, x.view())).collect();
    let (_, gm, ga) = total_loss(&main.view(), &views, &target.view(), &cfg, AuxMode::PlanB).unwrap();
    let err = max_rel_error(&gm, &|x| total(x, &aux), &main);
    assert!(err <= FD_TOL, "main: {err:e}");
    for k in 0..3 {
        let f = |x: &Array3<f64>| {
            let mut a = aux.clone();
            a[k] = x.clone();
            total(&main, &a)
        };
        let err = max_rel_error(&ga[k], &f, &aux[k]);
        assert!(err <= FD_TOL, "aux {k}: {err:e}");
    }
}

#[test]
fn lovasz_gradient_wrt_probs() {
    let mut r = rng(14);
    let probs = softmax(&random_logits(&mut r, 3, 4, 6).view());
    let target = random_target(&mut r, 3, 4, 6);
    let cfg = cfg_ignore(99);
    let g = lovasz_softmax(&probs.view(), &target.view(), &cfg).unwrap().grad;
    let f = |x: &Array3<f64>| lovasz_softmax(&x.view(), &target.view(), &cfg).unwrap().value;
    assert!(max_rel_error(&g, &f, &probs) <= FD_TOL);
}

#[test]
fn losses_are_nonnegative_and_boundary_bounded() {
    let mut r = rng(15);
    for _ in 0..20 {
        let logits = random_logits(&mut r, 4, 6, 7);
        let target = random_target(&mut r, 4, 6, 7);
        let (t, _, _) = main_loss(&logits.view(), &target.view(), &cfg_ignore(99)).unwrap();
        assert!(t.wce >= 0.0 && t.lovasz >= 0.0 && t.boundary >= 0.0);
        assert!(t.boundary <= 1.0);
    }
}
