use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::PointCloud;

/// Channel order of a range image.
pub const CHANNEL_X: usize = 0;
pub const CHANNEL_Y: usize = 1;
pub const CHANNEL_Z: usize = 2;
pub const CHANNEL_RANGE: usize = 3;
pub const CHANNEL_REMISSION: usize = 4;
pub const NUM_CHANNELS: usize = 5;

/// Label-image value of pixels that no point landed on.
pub const EMPTY_PIXEL: u32 = u32::MAX;

/// Range image geometry: size and the sensor's vertical field of view.
///
/// Both FOV values are positive magnitudes in degrees: `fov_up_deg` above
/// the horizon, `fov_down_deg` below it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    pub height: usize,
    pub width: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self::semantic_kitti(2048)
    }
}

impl ProjectionConfig {
    /// 64-beam HDL-64E geometry at the given width (512, 1024 or 2048).
    pub fn semantic_kitti(width: usize) -> Self {
        Self {
            height: 64,
            width,
            fov_up_deg: 3.0,
            fov_down_deg: 25.0,
        }
    }

    pub fn fov_up(&self) -> f64 {
        self.fov_up_deg.to_radians()
    }

    pub fn fov_down(&self) -> f64 {
        self.fov_down_deg.to_radians()
    }

    pub fn fov(&self) -> f64 {
        self.fov_up() + self.fov_down()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("projection height and width must be >= 1".into()));
        }
        if !(self.fov_up_deg + self.fov_down_deg > 0.0) {
            return Err(Error::Config("vertical field of view must be positive".into()));
        }
        Ok(())
    }

    /// Continuous (column, row) coordinates before flooring.
    pub fn continuous_coords(&self, x: f64, y: f64, z: f64, range: f64) -> (f64, f64) {
        let yaw = y.atan2(x);
        let pitch = (z / range).asin();
        let u = 0.5 * (1.0 - yaw / PI) * self.width as f64;
        let v = (1.0 - (pitch + self.fov_down()) / self.fov()) * self.height as f64;
        (u, v)
    }

    /// Discrete pixel of a point. Rows clamp into `[0, H-1]`. The column
    /// index floors; the single value `u = W` (yaw exactly -pi, the same
    /// direction as +pi) wraps to column 0.
    pub fn pixel(&self, x: f64, y: f64, z: f64, range: f64) -> Pixel {
        let (u, v) = self.continuous_coords(x, y, z, range);
        let mut col = u.floor().max(0.0) as usize;
        if col >= self.width {
            col = 0;
        }
        let row = (v.floor().max(0.0) as usize).min(self.height - 1);
        Pixel { row, col }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

/// A projected scan plus the bookkeeping to move labels back to points.
#[derive(Clone, Debug)]
pub struct RangeImage {
    /// (5, H, W): x, y, z, range, remission. Zero at empty pixels.
    pub channels: Array3<f32>,
    pub valid_mask: Array2<bool>,
    /// Pixel of each input point; `None` for zero-range points.
    pub pixel_of_point: Vec<Option<Pixel>>,
    /// Index of the point stored at each pixel, or -1.
    pub point_of_pixel: Array2<i64>,
    /// Label of the stored point; [`EMPTY_PIXEL`] where no point landed.
    pub label_image: Option<Array2<u32>>,
    /// Range of every input point (double precision).
    pub point_range: Vec<f64>,
}

impl RangeImage {
    pub fn height(&self) -> usize {
        self.valid_mask.nrows()
    }

    pub fn width(&self) -> usize {
        self.valid_mask.ncols()
    }

    pub fn num_points(&self) -> usize {
        self.pixel_of_point.len()
    }

    pub fn num_valid(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }

    /// Label image with empty pixels set to `ignore_id`, ready to train on.
    pub fn target(&self, ignore_id: u32) -> Option<Array2<u32>> {
        self.label_image
            .as_ref()
            .map(|l| l.mapv(|v| if v == EMPTY_PIXEL { ignore_id } else { v }))
    }

    /// True when every point owns its pixel outright.
    pub fn is_bijective(&self) -> bool {
        self.pixel_of_point.iter().enumerate().all(|(i, p)| match p {
            Some(p) => self.point_of_pixel[[p.row, p.col]] == i as i64,
            None => false,
        })
    }
}

/// Projects a cloud onto a range image.
///
/// When several points share a pixel the closest one is stored; equal
/// ranges go to the lower point index. Points at zero range are skipped.
pub fn spherical_project(pc: &PointCloud, cfg: &ProjectionConfig) -> RangeImage {
    let (h, w) = (cfg.height, cfg.width);
    let mut point_of_pixel = Array2::<i64>::from_elem((h, w), -1);
    let mut best_range = Array2::<f64>::from_elem((h, w), f64::INFINITY);
    let mut pixel_of_point = Vec::with_capacity(pc.len());
    let mut point_range = Vec::with_capacity(pc.len());

    for (i, p) in pc.xyz.iter().enumerate() {
        let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
        let d = (x * x + y * y + z * z).sqrt();
        point_range.push(d);
        if d <= 0.0 {
            pixel_of_point.push(None);
            continue;
        }
        let px = cfg.pixel(x, y, z, d);
        pixel_of_point.push(Some(px));
        let idx = [px.row, px.col];
        // Strict comparison keeps the lower index on ties.
        if d < best_range[idx] {
            best_range[idx] = d;
            point_of_pixel[idx] = i as i64;
        }
    }

    let mut channels = Array3::<f32>::zeros((5, h, w));
    let mut valid_mask = Array2::from_elem((h, w), false);
    let mut label_image = pc.labels.as_ref().map(|_| Array2::from_elem((h, w), EMPTY_PIXEL));
    for ((r, c), &i) in point_of_pixel.indexed_iter() {
        if i < 0 {
            continue;
        }
        let i = i as usize;
        let p = pc.xyz[i];
        valid_mask[[r, c]] = true;
        channels[[CHANNEL_X, r, c]] = p[0];
        channels[[CHANNEL_Y, r, c]] = p[1];
        channels[[CHANNEL_Z, r, c]] = p[2];
        channels[[CHANNEL_RANGE, r, c]] = point_range[i] as f32;
        channels[[CHANNEL_REMISSION, r, c]] = pc.remission[i];
        if let (Some(img), Some(labels)) = (label_image.as_mut(), pc.labels.as_ref()) {
            img[[r, c]] = labels[i];
        }
    }

    RangeImage {
        channels,
        valid_mask,
        pixel_of_point,
        point_of_pixel,
        label_image,
        point_range,
    }
}

/// Gives every point the label of its own pixel. Points without a pixel
/// (zero range) get `fill`.
pub fn unproject_labels(img_labels: &Array2<u32>, ri: &RangeImage, fill: u32) -> Result<Vec<u32>> {
    if img_labels.dim() != ri.valid_mask.dim() {
        return Err(Error::Consistency(format!(
            "label image is {:?} but the range image is {:?}",
            img_labels.dim(),
            ri.valid_mask.dim()
        )));
    }
    Ok(ri
        .pixel_of_point
        .iter()
        .map(|p| p.map_or(fill, |p| img_labels[[p.row, p.col]]))
        .collect())
}

/// Per-channel input standardization, applied to valid pixels only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNormalization {
    pub mean: [f32; NUM_CHANNELS],
    pub std: [f32; NUM_CHANNELS],
}

impl InputNormalization {
    /// Channel statistics commonly used for SemanticKITTI range images.
    pub fn semantic_kitti() -> Self {
        Self {
            mean: [10.88, 0.23, -1.04, 12.12, 0.21],
            std: [11.47, 6.91, 0.86, 12.32, 0.16],
        }
    }

    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_CHANNELS],
            std: [1.0; NUM_CHANNELS],
        }
    }

    /// Mean and standard deviation over the valid pixels of `images`.
    pub fn estimate<'a>(images: impl IntoIterator<Item = &'a RangeImage>) -> Self {
        let mut sum = [0f64; NUM_CHANNELS];
        let mut sq = [0f64; NUM_CHANNELS];
        let mut n = 0u64;
        for ri in images {
            for ((r, c), &valid) in ri.valid_mask.indexed_iter() {
                if !valid {
                    continue;
                }
                n += 1;
                for k in 0..NUM_CHANNELS {
                    let v = ri.channels[[k, r, c]] as f64;
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
        }
        if n == 0 {
            return Self::identity();
        }
        let mut out = Self::identity();
        for k in 0..NUM_CHANNELS {
            let m = sum[k] / n as f64;
            let var = (sq[k] / n as f64 - m * m).max(0.0);
            out.mean[k] = m as f32;
            out.std[k] = var.sqrt().max(1e-6) as f32;
        }
        out
    }

    /// Standardized copy of the channels; empty pixels stay 0.
    pub fn apply(&self, ri: &RangeImage) -> Array3<f32> {
        let mut out = ri.channels.clone();
        for ((k, r, c), v) in out.indexed_iter_mut() {
            if ri.valid_mask[[r, c]] {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(h: usize, w: usize) -> ProjectionConfig {
        ProjectionConfig {
            height: h,
            width: w,
            fov_up_deg: 3.0,
            fov_down_deg: 25.0,
        }
    }

    #[test]
    fn three_four_five() {
        let pc = PointCloud::new(vec![[3.0, 4.0, 0.0]], vec![0.5]);
        let ri = spherical_project(&pc, &cfg(64, 512));
        assert_eq!(ri.point_range[0], 5.0);
        let p = ri.pixel_of_point[0].unwrap();
        assert_eq!(ri.channels[[CHANNEL_RANGE, p.row, p.col]], 5.0);
        assert_eq!(ri.channels[[CHANNEL_REMISSION, p.row, p.col]], 0.5);
    }

    #[test]
    fn forward_axis_maps_to_center_column() {
        let c = cfg(64, 2048);
        let (u, _) = c.continuous_coords(10.0, 0.0, 0.0, 10.0);
        assert_eq!(u, 1024.0);
        assert_eq!(c.pixel(10.0, 0.0, 0.0, 10.0).col, 1024);
    }

    #[test]
    fn fov_edges_map_to_first_and_last_rows() {
        let c = cfg(64, 512);
        let up = c.fov_up();
        let (x, z) = (up.cos(), up.sin());
        let (_, v) = c.continuous_coords(x, 0.0, z, 1.0);
        assert!(v.abs() < 1e-9, "{v}");
        assert_eq!(c.pixel(x, 0.0, z, 1.0).row, 0);

        let down = c.fov_down();
        let (x, z) = (down.cos(), -down.sin());
        let (_, v) = c.continuous_coords(x, 0.0, z, 1.0);
        assert!((v - 64.0).abs() < 1e-9, "{v}");
        assert_eq!(c.pixel(x, 0.0, z, 1.0).row, 63);
    }

    #[test]
    fn points_behind_the_sensor_map_to_column_zero() {
        let c = cfg(8, 32);
        assert_eq!(c.pixel(-1.0, 0.0, 0.0, 1.0).col, 0);
        assert_eq!(c.pixel(-1.0, -0.0, 0.0, 1.0).col, 0);
    }

    #[test]
    fn closest_point_wins() {
        let pc = PointCloud::new(
            vec![[10.0, 0.0, 0.0], [5.0, 0.0, 0.0], [5.0, 0.0, 0.0]],
            vec![0.1, 0.2, 0.3],
        )
        .with_labels(vec![1, 2, 3]);
        let ri = spherical_project(&pc, &cfg(8, 32));
        let p = ri.pixel_of_point[0].unwrap();
        assert_eq!(ri.point_of_pixel[[p.row, p.col]], 1);
        assert_eq!(ri.label_image.as_ref().unwrap()[[p.row, p.col]], 2);
        assert_eq!(ri.num_valid(), 1);
        assert!(!ri.is_bijective());
    }

    #[test]
    fn empty_cloud_gives_empty_mask() {
        let ri = spherical_project(&PointCloud::default(), &cfg(4, 8));
        assert_eq!(ri.num_valid(), 0);
        assert!(ri.channels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_range_point_has_no_pixel() {
        let pc = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], vec![0.0, 0.0]);
        let ri = spherical_project(&pc, &cfg(4, 8));
        assert!(ri.pixel_of_point[0].is_none());
        let labels = unproject_labels(&Array2::from_elem((4, 8), 3), &ri, 9).unwrap();
        assert_eq!(labels, vec![9, 3]);
    }

    #[test]
    fn two_points_one_pixel_share_the_label() {
        let pc = PointCloud::new(vec![[10.0, 0.0, 0.0], [5.0, 0.0, 0.0]], vec![0.0; 2]);
        let ri = spherical_project(&pc, &cfg(8, 32));
        let mut img = Array2::zeros((8, 32));
        let p = ri.pixel_of_point[0].unwrap();
        img[[p.row, p.col]] = 7;
        assert_eq!(unproject_labels(&img, &ri, 0).unwrap(), vec![7, 7]);
    }

    #[test]
    fn unproject_shape_mismatch() {
        let pc = PointCloud::new(vec![[1.0, 0.0, 0.0]], vec![0.0]);
        let ri = spherical_project(&pc, &cfg(8, 32));
        let err = unproject_labels(&Array2::zeros((4, 32)), &ri, 0).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0, 8).validate().is_err());
        let mut c = cfg(8, 8);
        c.fov_up_deg = -30.0;
        assert!(c.validate().is_err());
        cfg(64, 2048).validate().unwrap();
    }

    #[test]
    fn normalization_skips_empty_pixels() {
        let pc = PointCloud::new(vec![[3.0, 4.0, 0.0], [0.0, 6.0, 8.0]], vec![0.5, 0.7]);
        let ri = spherical_project(&pc, &cfg(8, 32));
        let norm = InputNormalization::estimate([&ri]);
        assert!((norm.mean[CHANNEL_RANGE] - 7.5).abs() < 1e-5);
        let out = norm.apply(&ri);
        let mut sum = 0.0;
        for ((k, r, c), v) in out.indexed_iter() {
            if !ri.valid_mask[[r, c]] {
                assert_eq!(*v, 0.0);
            } else if k == CHANNEL_RANGE {
                sum += *v;
            }
        }
        assert!(sum.abs() < 1e-5);
    }
}
