use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::spherical::{RangeImage, CHANNEL_RANGE};

/// Range-gated neighbor vote used to move pixel labels back onto points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    /// Maximum number of voting neighbors.
    pub k: usize,
    /// Odd side length of the square pixel window around the point's pixel.
    pub window: usize,
    /// Neighbors whose range differs from the point's by more than this (m) are dropped.
    pub range_cutoff: f64,
    /// Width of the Gaussian range weighting.
    pub gaussian_sigma: f64,
    /// Also re-vote points that are themselves stored in their pixel. When
    /// false those points keep their pixel's label and only points hidden
    /// behind a closer point are re-labeled.
    pub relabel_visible: bool,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            window: 5,
            range_cutoff: 1.0,
            gaussian_sigma: 1.0,
            relabel_visible: false,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("knn k must be >= 1".into()));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "knn window must be odd and >= 1, got {}",
                self.window
            )));
        }
        if !(self.range_cutoff > 0.0) {
            return Err(Error::Config("knn range_cutoff must be > 0".into()));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::Config("knn gaussian_sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// Assigns a label to every point of `ri` from the predicted label image.
///
/// For each point, valid pixels in the window are ranked by the absolute
/// difference between their stored range and the point's range (ties by
/// row-major position); those beyond the cutoff are dropped and the first
/// `k` vote with weight `exp(-dr^2 / 2 sigma^2)`. The heaviest label wins,
/// ties going to the smaller label. With no surviving neighbor the point
/// keeps its own pixel's label. Points without a pixel get `fill`.
pub fn knn_postprocess(
    ri: &RangeImage,
    img_labels: &Array2<u32>,
    cfg: &KnnConfig,
    fill: u32,
) -> Result<Vec<u32>> {
    cfg.validate()?;
    if img_labels.dim() != ri.valid_mask.dim() {
        return Err(Error::Consistency(format!(
            "label image is {:?} but the range image is {:?}",
            img_labels.dim(),
            ri.valid_mask.dim()
        )));
    }
    let (h, w) = ri.valid_mask.dim();
    let half = (cfg.window / 2) as isize;
    let inv_two_sigma2 = 1.0 / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma);

    let mut candidates: Vec<(f64, u32)> = Vec::with_capacity(cfg.window * cfg.window);
    let mut votes: Vec<(u32, f64)> = Vec::with_capacity(cfg.k);
    let mut out = Vec::with_capacity(ri.num_points());
    for (i, px) in ri.pixel_of_point.iter().enumerate() {
        let Some(px) = *px else {
            out.push(fill);
            continue;
        };
        let own = img_labels[[px.row, px.col]];
        if !cfg.relabel_visible && ri.point_of_pixel[[px.row, px.col]] == i as i64 {
            out.push(own);
            continue;
        }
        let d = ri.point_range[i];
        candidates.clear();
        for dr in -half..=half {
            let r = px.row as isize + dr;
            if r < 0 || r >= h as isize {
                continue;
            }
            for dc in -half..=half {
                let c = px.col as isize + dc;
                if c < 0 || c >= w as isize {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                if !ri.valid_mask[[r, c]] {
                    continue;
                }
                let delta = (ri.channels[[CHANNEL_RANGE, r, c]] as f64 - d).abs();
                if delta <= cfg.range_cutoff {
                    candidates.push((delta, img_labels[[r, c]]));
                }
            }
        }
        if candidates.is_empty() {
            out.push(own);
            continue;
        }
        // Stable sort keeps row-major order among equal distances.
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        votes.clear();
        for &(delta, label) in candidates.iter().take(cfg.k) {
            let weight = (-delta * delta * inv_two_sigma2).exp();
            match votes.iter_mut().find(|(l, _)| *l == label) {
                Some((_, s)) => *s += weight,
                None => votes.push((label, weight)),
            }
        }
        let winner = votes
            .iter()
            .fold(None::<(u32, f64)>, |best, &(l, s)| match best {
                Some((bl, bs)) if bs > s || (bs == s && bl < l) => Some((bl, bs)),
                _ => Some((l, s)),
            })
            .map(|(l, _)| l)
            .unwrap_or(own);
        out.push(winner);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::PointCloud;
    use crate::projection::spherical::{spherical_project, unproject_labels, ProjectionConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scene(seed: u64, n: usize) -> (RangeImage, Array2<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xyz = (0..n)
            .map(|_| {
                let d: f64 = rng.gen_range(2.0..10.0);
                let yaw: f64 = rng.gen_range(-3.1..3.1);
                let pitch: f64 = rng.gen_range(-0.4..0.04);
                [
                    (d * pitch.cos() * yaw.cos()) as f32,
                    (d * pitch.cos() * yaw.sin()) as f32,
                    (d * pitch.sin()) as f32,
                ]
            })
            .collect();
        let pc = PointCloud::new(xyz, vec![0.0; n]);
        let cfg = ProjectionConfig {
            height: 16,
            width: 16,
            fov_up_deg: 3.0,
            fov_down_deg: 25.0,
        };
        let ri = spherical_project(&pc, &cfg);
        let labels = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0..4));
        (ri, labels)
    }

    #[test]
    fn single_neighbor_window_is_unprojection() {
        let cfg = KnnConfig {
            k: 1,
            window: 1,
            relabel_visible: true,
            ..Default::default()
        };
        for seed in 0..5 {
            let (ri, labels) = random_scene(seed, 600);
            assert_eq!(
                knn_postprocess(&ri, &labels, &cfg, 99).unwrap(),
                unproject_labels(&labels, &ri, 99).unwrap()
            );
        }
    }

    #[test]
    fn constant_labels_stay_constant() {
        let (ri, _) = random_scene(1, 800);
        let labels = Array2::from_elem((16, 16), 3);
        for window in [1, 3, 5, 7] {
            for relabel_visible in [false, true] {
                let cfg = KnnConfig {
                    window,
                    relabel_visible,
                    ..Default::default()
                };
                let out = knn_postprocess(&ri, &labels, &cfg, 3).unwrap();
                assert!(out.iter().all(|&l| l == 3));
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let (ri, labels) = random_scene(2, 10);
        let bad = KnnConfig {
            window: 4,
            ..Default::default()
        };
        assert!(matches!(knn_postprocess(&ri, &labels, &bad, 0), Err(Error::Config(_))));
        let bad = KnnConfig {
            k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
