use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::cloud::PointCloud;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationAug {
    pub enabled: bool,
    /// Yaw is drawn uniformly from `[-max_yaw, max_yaw]` radians.
    pub max_yaw: f64,
}

impl Default for RotationAug {
    fn default() -> Self {
        Self {
            enabled: true,
            max_yaw: std::f64::consts::PI,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutAug {
    pub enabled: bool,
    /// Per-scan drop probability is drawn uniformly from `[min_prob, max_prob]`.
    pub min_prob: f64,
    pub max_prob: f64,
}

impl Default for DropoutAug {
    fn default() -> Self {
        Self {
            enabled: true,
            min_prob: 0.0,
            max_prob: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterAug {
    pub enabled: bool,
    /// Per-axis standard deviation in meters.
    pub sigma: f64,
    /// Noise is clipped to `[-clip, clip]`.
    pub clip: f64,
}

impl Default for JitterAug {
    fn default() -> Self {
        Self {
            enabled: true,
            sigma: 0.03,
            clip: 0.1,
        }
    }
}

/// Training-time point cloud augmentation.
///
/// Randomness comes from a ChaCha8 stream seeded with the per-sample seed
/// (see [`derive_sample_seed`]). Draw order: yaw (if rotation is on), drop
/// probability (if dropout is on and the range is non-degenerate), one
/// uniform per point for dropout, then three normals per surviving point
/// for jitter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub rotation: RotationAug,
    pub dropout: DropoutAug,
    pub jitter: JitterAug,
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        let mut cfg = Self::default();
        cfg.rotation.enabled = false;
        cfg.dropout.enabled = false;
        cfg.jitter.enabled = false;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dropout;
        if !(0.0..1.0).contains(&d.min_prob) || !(0.0..1.0).contains(&d.max_prob) || d.min_prob > d.max_prob {
            return Err(Error::Config(format!(
                "dropout probability range [{}, {}] must lie in [0, 1)",
                d.min_prob, d.max_prob
            )));
        }
        if self.jitter.sigma < 0.0 || self.jitter.clip < 0.0 {
            return Err(Error::Config("jitter sigma and clip must be >= 0".into()));
        }
        if self.rotation.max_yaw < 0.0 {
            return Err(Error::Config("rotation max_yaw must be >= 0".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one sample of one epoch, independent of worker scheduling.
pub fn derive_sample_seed(global_seed: u64, epoch: u64, sample_index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(global_seed) ^ epoch) ^ sample_index)
}

pub fn augment(pc: &PointCloud, cfg: &AugmentationConfig, sample_seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut out = pc.clone();

    if cfg.rotation.enabled {
        let yaw = rng.gen_range(-cfg.rotation.max_yaw..=cfg.rotation.max_yaw);
        let (s, c) = yaw.sin_cos();
        for p in &mut out.xyz {
            let (x, y) = (p[0] as f64, p[1] as f64);
            p[0] = (c * x - s * y) as f32;
            p[1] = (s * x + c * y) as f32;
        }
    }

    if cfg.dropout.enabled {
        let p = if cfg.dropout.min_prob < cfg.dropout.max_prob {
            rng.gen_range(cfg.dropout.min_prob..cfg.dropout.max_prob)
        } else {
            cfg.dropout.min_prob
        };
        let keep: Vec<bool> = (0..out.len()).map(|_| rng.gen::<f64>() >= p).collect();
        // retain_indices clears dropped_rows: the result no longer maps onto a file.
        out = out.retain_indices(&keep);
    }

    if cfg.jitter.enabled && cfg.jitter.sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter.sigma).expect("sigma validated");
        let clip = cfg.jitter.clip;
        for p in &mut out.xyz {
            for v in p.iter_mut() {
                let n: f64 = normal.sample(&mut rng);
                *v += n.clamp(-clip, clip) as f32;
            }
        }
    }
    out
}
