//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use cenet::io::PointCloud;
use cenet::loss::LossConfig;
use cenet::projection::{KnnConfig, ProjectionConfig, RangeImage, CHANNEL_RANGE};
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_logits(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((c, h, w), |_| r.gen_range(-2.0..2.0))
}

pub fn random_target(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array2<u32> {
    Array2::from_shape_fn((h, w), |_| r.gen_range(0..c as u32))
}

pub fn cfg_ignore(ignore_id: u32) -> LossConfig {
    LossConfig {
        ignore_id,
        ..LossConfig::default()
    }
}

pub fn scalar_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn wce_oracle(logits: &Array3<f64>, target: &Array2<u32>, weights: &[f64], ignore: u32) -> f64 {
    let (c, h, w) = logits.dim();
    let (mut num, mut n) = (0.0, 0usize);
    for i in 0..h {
        for j in 0..w {
            let t = target[[i, j]];
            if t == ignore {
                continue;
            }
            let z: Vec<f64> = (0..c).map(|k| logits[[k, i, j]]).collect();
            let p = scalar_softmax(&z);
            num += weights[t as usize] * -p[t as usize].ln();
            n += 1;
        }
    }
    num / n as f64
}

/// Lovász extension of the Jaccard loss as a Choquet integral, evaluated by
/// summing the set function over every level set.
pub fn lovasz_oracle(probs: &Array3<f64>, target: &Array2<u32>, ignore: u32) -> f64 {
    let (c, h, w) = probs.dim();
    let pix: Vec<(usize, usize)> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .filter(|&(i, j)| target[[i, j]] != ignore)
        .collect();
    let n = pix.len();
    assert!(n <= 12, "enumeration oracle limited to 12 pixels");
    let mut total = 0.0;
    let mut present = 0;
    for k in 0..c {
        let fg: Vec<bool> = pix.iter().map(|&(i, j)| target[[i, j]] == k as u32).collect();
        if !fg.iter().any(|&b| b) {
            continue;
        }
        present += 1;
        let e: Vec<f64> = pix
            .iter()
            .zip(&fg)
            .map(|(&(i, j), &f)| if f { 1.0 - probs[[k, i, j]] } else { probs[[k, i, j]] })
            .collect();
        let mut f = 0.0;
        for mask in 1u32..(1 << n) {
            let inside = |i: usize| mask & (1 << i) != 0;
            let lo = (0..n).filter(|&i| inside(i)).map(|i| e[i]).fold(f64::INFINITY, f64::min);
            let hi = (0..n).filter(|&i| !inside(i)).map(|i| e[i]).fold(0.0, f64::max);
            let width = lo - hi;
            if width <= 0.0 {
                continue;
            }
            let gt_minus = (0..n).filter(|&i| fg[i] && !inside(i)).count() as f64;
            let union = (0..n).filter(|&i| fg[i] || inside(i)).count() as f64;
            f += width * (1.0 - gt_minus / union);
        }
        total += f;
    }
    total / present as f64
}

pub fn boundary_oracle(y: &Array3<f64>, theta0: usize) -> Array3<f64> {
    let (c, h, w) = y.dim();
    let r = (theta0 / 2) as isize;
    Array3::from_shape_fn((c, h, w), |(k, i, j)| {
        let mut m = f64::NEG_INFINITY;
        for di in -r..=r {
            for dj in -r..=r {
                let (a, b) = (i as isize + di, j as isize + dj);
                if a >= 0 && b >= 0 && a < h as isize && b < w as isize {
                    m = m.max(1.0 - y[[k, a as usize, b as usize]]);
                }
            }
        }
        m - (1.0 - y[[k, i, j]])
    })
}

pub fn boundary_loss_oracle(pred: &Array3<f64>, gt: &Array3<f64>, theta0: usize, skip: Option<usize>) -> f64 {
    let pb = boundary_oracle(pred, theta0);
    let gb = boundary_oracle(gt, theta0);
    let c = pred.dim().0;
    let eps = 1e-7;
    let (mut total, mut n) = (0.0, 0);
    for k in 0..c {
        if Some(k) == skip {
            continue;
        }
        let mut inter = 0.0;
        let mut sp = 0.0;
        let mut sg = 0.0;
        for (a, b) in pb.index_axis(Axis(0), k).iter().zip(gb.index_axis(Axis(0), k).iter()) {
            inter += a * b;
            sp += a;
            sg += b;
        }
        if sg <= 0.0 {
            continue;
        }
        let p = inter / (sp + eps);
        let r = inter / (sg + eps);
        total += 1.0 - 2.0 * p * r / (p + r + eps);
        n += 1;
    }
    total / n as f64
}

// ---------------------------------------------------------------- finite differences

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn max_rel_error(analytic: &Array3<f64>, f: &dyn Fn(&Array3<f64>) -> f64, x: &Array3<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_slice_mut().unwrap()[idx] += FD_STEP;
        xm.as_slice_mut().unwrap()[idx] -= FD_STEP;
        let fd = (f(&xp) - f(&xm)) / (2.0 * FD_STEP);
        let a = analytic.as_slice().unwrap()[idx];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}


// ---------------------------------------------------------------- projection

/// Pixel (row, col) of one point straight from the spherical mapping:
/// column from yaw over the full circle, row from pitch over the vertical
/// field of view, floored, rows clamped, the column `W` wrapped to 0.
pub fn pixel_oracle(cfg: &ProjectionConfig, p: [f32; 3]) -> Option<(usize, usize)> {
    let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return None;
    }
    let up = cfg.fov_up_deg * std::f64::consts::PI / 180.0;
    let down = cfg.fov_down_deg * std::f64::consts::PI / 180.0;
    let u = 0.5 * (1.0 - y.atan2(x) / std::f64::consts::PI) * cfg.width as f64;
    let v = (1.0 - ((z / r).asin() + down) / (up + down)) * cfg.height as f64;
    let mut col = u.floor().max(0.0) as usize;
    if col == cfg.width {
        col = 0;
    }
    let row = (v.floor().max(0.0) as usize).min(cfg.height - 1);
    Some((row, col))
}

/// Which point each pixel keeps: group points by pixel and take the
/// smallest (range, index).
pub fn occlusion_oracle(cfg: &ProjectionConfig, pc: &PointCloud) -> Array2<i64> {
    let mut groups: BTreeMap<(usize, usize), Vec<(f64, usize)>> = BTreeMap::new();
    for (i, p) in pc.xyz.iter().enumerate() {
        if let Some(px) = pixel_oracle(cfg, *p) {
            let d = ((p[0] as f64).powi(2) + (p[1] as f64).powi(2) + (p[2] as f64).powi(2)).sqrt();
            groups.entry(px).or_default().push((d, i));
        }
    }
    let mut out = Array2::from_elem((cfg.height, cfg.width), -1i64);
    for (px, mut pts) in groups {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out[[px.0, px.1]] = pts[0].1 as i64;
    }
    out
}

/// A cloud with the hard cases mixed in: exact duplicates, points on the
/// same ray at different ranges, the origin, the yaw seam and points
/// outside the vertical field of view.
pub fn random_cloud(r: &mut ChaCha8Rng, n: usize, labels: Option<u32>) -> PointCloud {
    let mut xyz: Vec<[f32; 3]> = Vec::with_capacity(n);
    while xyz.len() < n {
        let roll: f64 = r.gen();
        let p = if roll < 0.05 && !xyz.is_empty() {
            xyz[r.gen_range(0..xyz.len())]
        } else if roll < 0.10 && !xyz.is_empty() {
            let q = xyz[r.gen_range(0..xyz.len())];
            let s: f32 = r.gen_range(0.5..2.0);
            [q[0] * s, q[1] * s, q[2] * s]
        } else if roll < 0.11 {
            [0.0, 0.0, 0.0]
        } else if roll < 0.13 {
            [-r.gen_range(1.0..50.0f32), 0.0, r.gen_range(-3.0..1.0f32)]
        } else {
            let d: f64 = r.gen_range(0.5..80.0);
            let yaw: f64 = r.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let pitch: f64 = r.gen_range(-0.7..0.3);
            [
                (d * pitch.cos() * yaw.cos()) as f32,
                (d * pitch.cos() * yaw.sin()) as f32,
                (d * pitch.sin()) as f32,
            ]
        };
        xyz.push(p);
    }
    let remission = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
    let pc = PointCloud::new(xyz, remission);
    match labels {
        Some(c) => {
            let l = (0..n).map(|_| r.gen_range(0..c)).collect();
            pc.with_labels(l)
        }
        None => pc,
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- knn

/// Label of every point by scanning the whole image: candidates are valid
/// pixels within the window (Chebyshev distance) whose stored range is
/// within the cutoff, ordered by (range gap, row, col); the first `k` cast
/// Gaussian-weighted votes and the heaviest label wins, ties to the smaller
/// label. No candidate keeps the own-pixel label.
pub fn knn_oracle(ri: &RangeImage, labels: &Array2<u32>, cfg: &KnnConfig, fill: u32) -> Vec<u32> {
    let (h, w) = labels.dim();
    let half = cfg.window / 2;
    (0..ri.pixel_of_point.len())
        .map(|i| {
            let Some(px) = ri.pixel_of_point[i] else { return fill };
            let own = labels[[px.row, px.col]];
            if !cfg.relabel_visible && ri.point_of_pixel[[px.row, px.col]] == i as i64 {
                return own;
            }
            let d = ri.point_range[i];
            let mut cand = Vec::new();
            for r in 0..h {
                for c in 0..w {
                    if r.abs_diff(px.row) > half || c.abs_diff(px.col) > half || !ri.valid_mask[[r, c]] {
                        continue;
                    }
                    let gap = (ri.channels[[CHANNEL_RANGE, r, c]] as f64 - d).abs();
                    if gap <= cfg.range_cutoff {
                        cand.push((gap, r, c));
                    }
                }
            }
            if cand.is_empty() {
                return own;
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
            let mut votes: BTreeMap<u32, f64> = BTreeMap::new();
            for &(gap, r, c) in cand.iter().take(cfg.k) {
                *votes.entry(labels[[r, c]]).or_default() +=
                    (-gap * gap / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma)).exp();
            }
            // BTreeMap iterates labels ascending: strict > keeps the smaller on ties
            let mut best = (u32::MAX, f64::NEG_INFINITY);
            for (&l, &s) in &votes {
                if s > best.1 {
                    best = (l, s);
                }
            }
            best.0
        })
        .collect()
}

// ---------------------------------------------------------------- metrics

/// `counts[gt][pred]` by direct tally; predictions outside `0..c` go to an
/// extra last column.
pub fn tally_oracle(pred: &[u32], gt: &[u32], c: usize, ignore: u32) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; c + 1]; c];
    for (&p, &g) in pred.iter().zip(gt) {
        if g == ignore {
            continue;
        }
        m[g as usize][(p as usize).min(c)] += 1;
    }
    m
}

/// Per-class IoU from a tally (ignore class and zero-support classes give
/// `None`) and the mean over the defined ones.
pub fn iou_oracle(m: &[Vec<u64>], ignore: u32) -> (Vec<Option<f64>>, Option<f64>) {
    let c = m.len();
    let per: Vec<Option<f64>> = (0..c)
        .map(|k| {
            if k as u32 == ignore {
                return None;
            }
            let tp = m[k][k] as f64;
            let fn_: f64 = (0..=c).filter(|&j| j != k).map(|j| m[k][j] as f64).sum();
            let fp: f64 = (0..c).filter(|&g| g != k && g as u32 != ignore).map(|g| m[g][k] as f64).sum();
            let den = tp + fp + fn_;
            (den > 0.0).then(|| tp / den)
        })
        .collect();
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (per, miou)
}
