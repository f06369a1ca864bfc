//! Projection-to-prediction plumbing and split evaluation in image and
//! point space.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_labels, prediction_relpath, write_prediction_labels, ClassConfig, Dataset, PointCloud, Split};
use crate::metrics::ConfusionMatrix;
use crate::model::{CENet, Mode};
use crate::nn::Tensor;
use crate::projection::{knn_postprocess, spherical_project, unproject_labels, InputNormalization, KnnConfig, ProjectionConfig, RangeImage};

/// A scan ready for the network: normalized input, pixel target and the
/// bookkeeping to carry predictions back to points.
#[derive(Clone, Debug)]
pub struct PreparedScan {
    pub input: Array3<f32>,
    /// Pixel labels with empty pixels set to the ignore ID.
    pub target: Option<Array2<u32>>,
    pub range_image: RangeImage,
    pub point_labels: Option<Vec<u32>>,
    pub dropped_rows: Vec<usize>,
}

pub fn prepare_scan(pc: &PointCloud, proj: &ProjectionConfig, norm: &InputNormalization, ignore_id: u32) -> PreparedScan {
    let ri = spherical_project(pc, proj);
    PreparedScan {
        input: norm.apply(&ri),
        target: ri.target(ignore_id),
        range_image: ri,
        point_labels: pc.labels.clone(),
        dropped_rows: pc.dropped_rows.clone(),
    }
}

/// Per-pixel argmax of one sample's logits. The ignore channel is never
/// chosen; ties go to the lower class index.
pub fn argmax_labels(logits: &Tensor, n: usize, ignore_channel: Option<usize>) -> Array2<u32> {
    let [_, c, h, w] = logits.shape();
    let plane = h * w;
    let s = logits.sample_slice(n);
    let mut best = vec![f32::NEG_INFINITY; plane];
    let mut label = vec![u32::MAX; plane];
    for k in 0..c {
        if Some(k) == ignore_channel {
            continue;
        }
        for (p, &v) in s[k * plane..(k + 1) * plane].iter().enumerate() {
            if v > best[p] || label[p] == u32::MAX {
                best[p] = v;
                label[p] = k as u32;
            }
        }
    }
    Array2::from_shape_vec((h, w), label).expect("plane size")
}

/// Eval-mode pixel predictions for `scans`, `batch_size` at a time.
pub fn predict_images(
    model: &mut CENet,
    scans: &[&PreparedScan],
    batch_size: usize,
    ignore_channel: Option<usize>,
) -> Result<Vec<Array2<u32>>> {
    let mut out = Vec::with_capacity(scans.len());
    for chunk in scans.chunks(batch_size.max(1)) {
        let inputs: Vec<Array3<f32>> = chunk.iter().map(|s| s.input.clone()).collect();
        let x = Tensor::stack(&inputs);
        let logits = model.forward(&x, Mode::Eval)?.main;
        out.extend((0..chunk.len()).map(|n| argmax_labels(&logits, n, ignore_channel)));
    }
    Ok(out)
}

/// Point labels from a pixel prediction, by own-pixel lookup or KNN vote.
/// Points that never received a pixel get the ignore ID, which scores as a
/// miss for their true class.
pub fn points_from_image(pred: &Array2<u32>, ri: &RangeImage, knn: Option<&KnnConfig>, ignore_id: u32) -> Result<Vec<u32>> {
    match knn {
        Some(cfg) => knn_postprocess(ri, pred, cfg, ignore_id),
        None => unproject_labels(pred, ri, ignore_id),
    }
}

/// Confusion matrices over a set of scans in both evaluation spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitEvaluation {
    /// Pixel predictions against the projected labels at valid pixels.
    pub image: ConfusionMatrix,
    /// Point predictions (after unprojection and optional KNN) against the
    /// original per-point labels.
    pub point: ConfusionMatrix,
    pub scans: usize,
}

impl SplitEvaluation {
    pub fn new(classes: &ClassConfig) -> Self {
        Self {
            image: ConfusionMatrix::new(classes.num_classes, classes.ignore_id),
            point: ConfusionMatrix::new(classes.num_classes, classes.ignore_id),
            scans: 0,
        }
    }

    /// Adds one scan. Returns the point predictions.
    pub fn add(&mut self, scan: &PreparedScan, pred: &Array2<u32>, knn: Option<&KnnConfig>) -> Result<Vec<u32>> {
        let ignore = self.point.ignore_id();
        if let Some(t) = &scan.target {
            let (p, g): (Vec<u32>, Vec<u32>) = pred
                .iter()
                .zip(t.iter())
                .zip(scan.range_image.valid_mask.iter())
                .filter(|(_, &v)| v)
                .map(|((&p, &g), _)| (p, g))
                .unzip();
            self.image.accumulate(&p, &g)?;
        }
        let points = points_from_image(pred, &scan.range_image, knn, ignore)?;
        if let Some(gt) = &scan.point_labels {
            self.point.accumulate(&points, gt)?;
        }
        self.scans += 1;
        Ok(points)
    }

    pub fn merge(&mut self, other: &SplitEvaluation) -> Result<()> {
        self.image.merge(&other.image)?;
        self.point.merge(&other.point)?;
        self.scans += other.scans;
        Ok(())
    }

    pub fn record(&self, classes: &ClassConfig, split: Split, knn: bool, config: serde_json::Value) -> MetricsRecord {
        MetricsRecord {
            split: split.to_string(),
            scans: self.scans,
            knn,
            point_space: SpaceMetrics::from_matrix(&self.point, classes),
            image_space: SpaceMetrics::from_matrix(&self.image, classes),
            epoch: None,
            config,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceMetrics {
    pub miou: Option<f64>,
    pub accuracy: Option<f64>,
    pub per_class_iou: BTreeMap<String, Option<f64>>,
    pub confusion: ConfusionMatrix,
}

impl SpaceMetrics {
    pub fn from_matrix(cm: &ConfusionMatrix, classes: &ClassConfig) -> Self {
        let report = cm.iou();
        let per_class_iou = classes
            .evaluated_classes()
            .map(|k| (classes.class_names[k].clone(), report.per_class[k]))
            .collect();
        Self {
            miou: report.miou,
            accuracy: cm.accuracy(),
            per_class_iou,
            confusion: cm.clone(),
        }
    }
}

/// Serialized evaluation result. Point space is the headline number; image
/// space scores the network's pixel predictions directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub split: String,
    pub scans: usize,
    pub knn: bool,
    pub point_space: SpaceMetrics,
    pub image_space: SpaceMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions<'a> {
    pub knn: Option<KnnConfig>,
    pub batch_size: usize,
    /// When set, point predictions are written under this directory in the
    /// dataset's label format.
    pub predictions_dir: Option<&'a Path>,
}

/// Evaluates `model` on every labeled scan of `split`.
pub fn evaluate_split(
    model: &mut CENet,
    dataset: &Dataset,
    split: Split,
    proj: &ProjectionConfig,
    norm: &InputNormalization,
    opts: &EvalOptions,
) -> Result<SplitEvaluation> {
    let classes = &dataset.classes;
    if model.config().num_classes != classes.num_classes {
        return Err(Error::Consistency(format!(
            "model predicts {} classes but the dataset defines {}",
            model.config().num_classes,
            classes.num_classes
        )));
    }
    let mut eval = SplitEvaluation::new(classes);
    let samples = dataset.samples(split)?;
    let batch = opts.batch_size.max(1);
    for chunk in samples.chunks(batch) {
        let prepared = chunk
            .iter()
            .map(|s| Ok(prepare_scan(&dataset.load(s)?, proj, norm, classes.ignore_id)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PreparedScan> = prepared.iter().collect();
        let preds = predict_images(model, &refs, batch, classes.ignore_channel())?;
        for ((sample, scan), pred) in chunk.iter().zip(&prepared).zip(&preds) {
            let points = eval.add(scan, pred, opts.knn.as_ref())?;
            if let Some(dir) = opts.predictions_dir {
                write_prediction_labels(dir.join(prediction_relpath(sample)), &points, classes, &scan.dropped_rows)?;
            }
        }
    }
    Ok(eval)
}

/// Point-space confusion matrix from prediction files previously written
/// under `predictions_dir`.
pub fn evaluate_prediction_files(dataset: &Dataset, split: Split, predictions_dir: &Path) -> Result<ConfusionMatrix> {
    let classes = &dataset.classes;
    let mut cm = ConfusionMatrix::new(classes.num_classes, classes.ignore_id);
    for sample in dataset.samples(split)? {
        let pc = dataset.load(&sample)?;
        let Some(gt) = &pc.labels else { continue };
        let pred = load_labels(predictions_dir.join(prediction_relpath(&sample)), classes, &pc)?;
        cm.accumulate(&pred, gt)?;
    }
    Ok(cm)
}
