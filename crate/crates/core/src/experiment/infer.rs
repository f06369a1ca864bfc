//! Batch inference on loose scan files and the projection debug export.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{points_from_image, predict_images, prepare_scan};
use crate::io::{load_scan, write_prediction_labels, ClassConfig, PointCloud};
use crate::model::CENet;
use crate::projection::{spherical_project, InputNormalization, KnnConfig, ProjectionConfig, RangeImage, CHANNEL_RANGE, CHANNEL_REMISSION, EMPTY_PIXEL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferredScan {
    pub scan: PathBuf,
    pub output: PathBuf,
    pub points: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedScan {
    pub scan: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub written: Vec<InferredScan>,
    pub skipped: Vec<SkippedScan>,
}

pub struct InferSettings<'a> {
    pub projection: &'a ProjectionConfig,
    pub normalization: &'a InputNormalization,
    pub classes: &'a ClassConfig,
    pub knn: Option<&'a KnnConfig>,
}

/// Predicts every scan independently and writes `<out>/<stem>.label` in the
/// dataset's label format. Unreadable scans, and scans whose stem was
/// already used, are skipped and reported; only output-side failures abort.
pub fn infer_scans(model: &mut CENet, scans: &[PathBuf], out: &Path, s: &InferSettings) -> Result<InferReport> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut report = InferReport::default();
    let mut stems = HashSet::new();
    for path in scans {
        let t0 = Instant::now();
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if !stems.insert(stem.clone()) {
            report.skipped.push(SkippedScan {
                scan: path.clone(),
                reason: format!("another scan already wrote {stem}.label"),
            });
            continue;
        }
        let pc = match load_scan(path) {
            Ok(pc) => pc,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push(SkippedScan {
                    scan: path.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let prepared = prepare_scan(&pc, s.projection, s.normalization, s.classes.ignore_id);
        let pred = predict_images(model, &[&prepared], 1, s.classes.ignore_channel())?.remove(0);
        let points = points_from_image(&pred, &prepared.range_image, s.knn, s.classes.ignore_id)?;
        let output = out.join(format!("{stem}.label"));
        write_prediction_labels(&output, &points, s.classes, &pc.dropped_rows)?;
        let seconds = t0.elapsed().as_secs_f64();
        log::info!("{}: {} points in {:.1} ms", path.display(), points.len(), 1e3 * seconds);
        report.written.push(InferredScan {
            scan: path.clone(),
            output,
            points: points.len(),
            seconds,
        });
    }
    Ok(report)
}

/// Summary written next to the projection images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSidecar {
    pub scan: PathBuf,
    pub projection: ProjectionConfig,
    pub height: usize,
    pub width: usize,
    pub points: usize,
    pub projected_points: usize,
    pub valid_pixels: usize,
    /// Points that lost their pixel to a closer point.
    pub occluded_points: usize,
    pub range_min: f32,
    pub range_max: f32,
    pub remission_min: f32,
    pub remission_max: f32,
    pub files: Vec<String>,
}

fn channel_extent(ri: &RangeImage, ch: usize) -> (f32, f32) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for (&v, &ok) in ri.channels.index_axis(ndarray::Axis(0), ch).iter().zip(ri.valid_mask.iter()) {
        if ok {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// Valid pixels scaled to 1..=255 over `[lo, hi]`; empty pixels are 0.
fn channel_png(ri: &RangeImage, ch: usize, lo: f32, hi: f32) -> GrayImage {
    let (h, w) = (ri.height(), ri.width());
    let span = (hi - lo).max(f32::MIN_POSITIVE);
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        if !ri.valid_mask[[r, c]] {
            return Luma([0]);
        }
        let t = (ri.channels[[ch, r, c]] - lo) / span;
        Luma([1 + (t * 254.0).round().clamp(0.0, 254.0) as u8])
    })
}

/// Fixed, well-separated color per class; empty pixels are black.
fn label_color(label: u32) -> [u8; 3] {
    if label == EMPTY_PIXEL {
        return [0, 0, 0];
    }
    let hue = (label as f64 * 0.618_033_988_75).fract();
    let h6 = hue * 6.0;
    let x = 1.0 - (h6 % 2.0 - 1.0).abs();
    let (r, g, b) = match h6 as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let v = |c: f64| (55.0 + 200.0 * c) as u8;
    [v(r), v(g), v(b)]
}

/// Writes `<stem>_range.png`, `<stem>_remission.png`, `<stem>_labels.png`
/// (when the cloud is labeled) and `<stem>_projection.json` into `out`.
pub fn export_projection(pc: &PointCloud, scan: &Path, cfg: &ProjectionConfig, out: &Path) -> Result<ProjectionSidecar> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ri = spherical_project(pc, cfg);
    let stem = scan.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scan".into());
    let save = |img: &dyn Fn(&Path) -> image::ImageResult<()>, name: String| -> Result<String> {
        let p = out.join(&name);
        img(&p).map_err(|e| Error::Environment(format!("writing {}: {e}", p.display())))?;
        Ok(name)
    };
    let (rmin, rmax) = channel_extent(&ri, CHANNEL_RANGE);
    let (emin, emax) = channel_extent(&ri, CHANNEL_REMISSION);
    let mut files = Vec::new();
    let range_png = channel_png(&ri, CHANNEL_RANGE, rmin, rmax);
    files.push(save(&|p| range_png.save(p), format!("{stem}_range.png"))?);
    let rem_png = channel_png(&ri, CHANNEL_REMISSION, emin, emax);
    files.push(save(&|p| rem_png.save(p), format!("{stem}_remission.png"))?);
    if let Some(labels) = &ri.label_image {
        let img: RgbImage =
            ImageBuffer::from_fn(ri.width() as u32, ri.height() as u32, |x, y| Rgb(label_color(labels[[y as usize, x as usize]])));
        files.push(save(&|p| img.save(p), format!("{stem}_labels.png"))?);
    }
    let projected = ri.pixel_of_point.iter().filter(|p| p.is_some()).count();
    let sidecar = ProjectionSidecar {
        scan: scan.to_path_buf(),
        projection: cfg.clone(),
        height: ri.height(),
        width: ri.width(),
        points: ri.num_points(),
        projected_points: projected,
        valid_pixels: ri.num_valid(),
        occluded_points: projected - ri.num_valid(),
        range_min: rmin,
        range_max: rmax,
        remission_min: emin,
        remission_max: emax,
        files,
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Environment(e.to_string()))?;
    let p = out.join(format!("{stem}_projection.json"));
    std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    Ok(sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_colors_are_distinct_for_small_ids() {
        let colors: HashSet<[u8; 3]> = (0..20).map(label_color).collect();
        assert_eq!(colors.len(), 20);
        assert_eq!(label_color(EMPTY_PIXEL), [0, 0, 0]);
    }
}
