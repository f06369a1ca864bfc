//! Synthetic scans for desk-scale experiments.
//!
//! Each scan is produced by casting one ray per range-image pixel center
//! (64 beams by default, evenly spread over the vertical field of view)
//! into a simple scene: a ground plane, a ring of wall segments, and
//! per-class objects. A point's label is the class of the surface its ray
//! hit, so labels are a deterministic function of geometry. Because every
//! ray leaves through a pixel center, projecting a toy scan with the
//! matching projection config is bijective.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::augment::derive_sample_seed;
use crate::io::cloud::{write_scan, PointCloud};
use crate::io::labels::write_raw_labels;

/// Sensor height above the ground plane, meters.
pub const SENSOR_HEIGHT: f64 = 1.73;
const MAX_RANGE: f64 = 80.0;
const WALL_SEGMENTS: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub n_scans: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_scans: 200,
            n_classes: 4,
            seed: 0,
            rows: 64,
            cols: 512,
            fov_up_deg: 3.0,
            fov_down_deg: 25.0,
            val_fraction: 0.2,
            test_fraction: 0.0,
        }
    }
}

/// Paths written by [`make_toy_dataset`], per split.
#[derive(Clone, Debug, Default)]
pub struct ToyManifest {
    pub train: Vec<PathBuf>,
    pub val: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

impl ToyManifest {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    /// Oriented box standing on the ground.
    Box {
        cx: f64,
        cy: f64,
        yaw: f64,
        half_l: f64,
        half_w: f64,
        height: f64,
    },
    /// Vertical cylinder standing on the ground.
    Cylinder {
        cx: f64,
        cy: f64,
        radius: f64,
        height: f64,
    },
}

#[derive(Clone, Copy, Debug)]
struct Object {
    shape: Shape,
    class: u32,
}

#[derive(Clone, Copy, Debug)]
struct Wall {
    radius: f64,
    top: f64,
}

struct Scene {
    walls: Vec<Wall>,
    objects: Vec<Object>,
}

const GROUND: u32 = 0;
const STRUCTURE: u32 = 1;

impl Scene {
    fn random(n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let walls = (0..WALL_SEGMENTS)
            .map(|_| Wall {
                radius: rng.gen_range(20.0..35.0),
                top: rng.gen_range(1.5..8.0),
            })
            .collect();
        let mut objects = Vec::new();
        let n_obj_classes = n_classes.saturating_sub(2);
        for k in 2..n_classes {
            // Each object class lives in its own azimuth sector.
            let width = 2.0 * PI / n_obj_classes as f64;
            let lo = -PI + (k - 2) as f64 * width;
            for _ in 0..4 {
                let az = rng.gen_range(lo + 0.1 * width..lo + 0.9 * width);
                let r = rng.gen_range(5.0..11.0);
                let (cx, cy) = (r * az.cos(), r * az.sin());
                let shape = if k % 2 == 0 {
                    let s = 1.0 + 0.15 * (k - 2) as f64;
                    Shape::Box {
                        cx,
                        cy,
                        yaw: rng.gen_range(0.0..PI),
                        half_l: s * rng.gen_range(1.75..2.25),
                        half_w: s * rng.gen_range(0.8..1.0),
                        height: s * rng.gen_range(1.3..1.7),
                    }
                } else {
                    let s = 1.0 + 0.15 * (k - 3) as f64;
                    Shape::Cylinder {
                        cx,
                        cy,
                        radius: s * rng.gen_range(0.4..0.6),
                        height: s * rng.gen_range(2.5..4.0),
                    }
                };
                objects.push(Object {
                    shape,
                    class: k as u32,
                });
            }
        }
        Self { walls, objects }
    }

    /// Nearest hit along unit direction `dir` from the sensor origin.
    fn cast(&self, dir: [f64; 3]) -> Option<(f64, u32)> {
        let mut best: Option<(f64, u32)> = None;
        let mut consider = |t: f64, class: u32| {
            if t > 1e-6 && t < MAX_RANGE && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, class));
            }
        };
        let ground_z = -SENSOR_HEIGHT;
        if dir[2] < 0.0 {
            consider(ground_z / dir[2], GROUND);
        }
        let horiz = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        if horiz > 1e-9 {
            let az = dir[1].atan2(dir[0]);
            let seg = (((az + PI) / (2.0 * PI)) * WALL_SEGMENTS as f64) as usize;
            let wall = self.walls[seg.min(WALL_SEGMENTS - 1)];
            let t = wall.radius / horiz;
            let z = t * dir[2];
            if z >= ground_z && z <= ground_z + wall.top {
                consider(t, STRUCTURE);
            }
        }
        for obj in &self.objects {
            if let Some(t) = hit_shape(&obj.shape, dir) {
                consider(t, obj.class);
            }
        }
        best
    }
}

fn hit_shape(shape: &Shape, d: [f64; 3]) -> Option<f64> {
    let ground_z = -SENSOR_HEIGHT;
    match *shape {
        Shape::Box {
            cx,
            cy,
            yaw,
            half_l,
            half_w,
            height,
        } => {
            // Ray origin and direction in the box frame.
            let (s, c) = yaw.sin_cos();
            let ox = c * (-cx) + s * (-cy);
            let oy = -s * (-cx) + c * (-cy);
            let dx = c * d[0] + s * d[1];
            let dy = -s * d[0] + c * d[1];
            let lo = [-half_l, -half_w, ground_z];
            let hi = [half_l, half_w, ground_z + height];
            let o = [ox, oy, 0.0];
            let dir = [dx, dy, d[2]];
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            for k in 0..3 {
                if dir[k].abs() < 1e-12 {
                    if o[k] < lo[k] || o[k] > hi[k] {
                        return None;
                    }
                } else {
                    let a = (lo[k] - o[k]) / dir[k];
                    let b = (hi[k] - o[k]) / dir[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
            }
            (t0 <= t1 && t0 > 0.0).then_some(t0)
        }
        Shape::Cylinder {
            cx,
            cy,
            radius,
            height,
        } => {
            let top = ground_z + height;
            let mut best: Option<f64> = None;
            let a = d[0] * d[0] + d[1] * d[1];
            if a > 1e-12 {
                let b = -2.0 * (d[0] * cx + d[1] * cy);
                let c0 = cx * cx + cy * cy - radius * radius;
                let disc = b * b - 4.0 * a * c0;
                if disc >= 0.0 {
                    let t = (-b - disc.sqrt()) / (2.0 * a);
                    let z = t * d[2];
                    if t > 0.0 && z >= ground_z && z <= top {
                        best = Some(t);
                    }
                }
            }
            if top < 0.0 && d[2] < 0.0 {
                let t = top / d[2];
                let (x, y) = (t * d[0] - cx, t * d[1] - cy);
                if x * x + y * y <= radius * radius && best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            }
            best
        }
    }
}

/// Remission signature of a class, before noise.
fn class_remission(class: u32, n_classes: usize) -> f64 {
    match class {
        GROUND => 0.2,
        STRUCTURE => 0.45,
        k => 0.6 + 0.3 * (k as f64 - 2.0) / (n_classes as f64 - 2.0).max(1.0),
    }
}

/// Generates one labeled scan. Labels are train IDs `0..n_classes`.
pub fn generate_scan(cfg: &ToyConfig, scan_seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(scan_seed);
    let scene = Scene::random(cfg.n_classes, &mut rng);
    let fov_up = cfg.fov_up_deg.to_radians();
    let fov = (cfg.fov_up_deg + cfg.fov_down_deg).to_radians();
    let range_noise = Normal::new(0.0, 0.005).unwrap();
    let rem_noise = Normal::new(0.0, 0.05).unwrap();

    let mut xyz = Vec::new();
    let mut remission = Vec::new();
    let mut labels = Vec::new();
    for v in 0..cfg.rows {
        let pitch = fov_up - (v as f64 + 0.5) / cfg.rows as f64 * fov;
        for u in 0..cfg.cols {
            let yaw = PI * (1.0 - 2.0 * (u as f64 + 0.5) / cfg.cols as f64);
            let dir = [
                pitch.cos() * yaw.cos(),
                pitch.cos() * yaw.sin(),
                pitch.sin(),
            ];
            if let Some((t, class)) = scene.cast(dir) {
                let t = t + range_noise.sample(&mut rng);
                xyz.push([
                    (t * dir[0]) as f32,
                    (t * dir[1]) as f32,
                    (t * dir[2]) as f32,
                ]);
                let r: f64 = class_remission(class, cfg.n_classes) + rem_noise.sample(&mut rng);
                remission.push(r.clamp(0.0, 1.0) as f32);
                labels.push(class);
            }
        }
    }
    PointCloud::new(xyz, remission).with_labels(labels)
}

/// Writes a synthetic dataset in the SemanticKITTI directory layout:
/// sequence 00 trains, 01 validates, 02 tests. Label files hold raw IDs
/// (`train + 1`), readable with [`crate::io::ClassConfig::toy`].
pub fn make_toy_dataset(root: impl AsRef<Path>, cfg: &ToyConfig) -> Result<ToyManifest> {
    if cfg.n_classes < 2 {
        return Err(Error::Config("toy dataset needs at least 2 classes".into()));
    }
    if cfg.rows == 0 || cfg.cols == 0 {
        return Err(Error::Config("toy scan needs at least one row and column".into()));
    }
    let root = root.as_ref();
    let n_val = (cfg.n_scans as f64 * cfg.val_fraction).round() as usize;
    let n_test = (cfg.n_scans as f64 * cfg.test_fraction).round() as usize;
    let n_train = cfg.n_scans.saturating_sub(n_val + n_test);

    let mut manifest = ToyManifest::default();
    for i in 0..cfg.n_scans {
        let (seq, local, bucket) = if i < n_train {
            ("00", i, &mut manifest.train)
        } else if i < n_train + n_val {
            ("01", i - n_train, &mut manifest.val)
        } else {
            ("02", i - n_train - n_val, &mut manifest.test)
        };
        let pc = generate_scan(cfg, derive_sample_seed(cfg.seed, u64::MAX, i as u64));
        let dir = root.join("sequences").join(seq);
        let scan_path = dir.join("velodyne").join(format!("{local:06}.bin"));
        let label_path = dir.join("labels").join(format!("{local:06}.label"));
        write_scan(&scan_path, &pc)?;
        let raw: Vec<u32> = pc.labels.as_ref().unwrap().iter().map(|&l| l + 1).collect();
        write_raw_labels(&label_path, &raw)?;
        bucket.push(scan_path);
    }
    Ok(manifest)
}
