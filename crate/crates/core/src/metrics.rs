//! Confusion-matrix bookkeeping, IoU, and forward-latency benchmarking.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CENet, Mode, ModelConfig};
use crate::nn::Tensor;

/// Ground truth in rows, prediction in columns. A trailing column collects
/// predictions outside `[0, C)` (points the model never labeled), which
/// count as misses for their true class but as no class's false positive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    ignore_id: u32,
    counts: Vec<u64>,
}

/// Per-class IoU (`None` where the class has no support in either
/// prediction or ground truth, and for the ignore class) and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    /// `None` when no class qualifies.
    pub miou: Option<f64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize, ignore_id: u32) -> Self {
        Self {
            num_classes,
            ignore_id,
            counts: vec![0; num_classes * (num_classes + 1)],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_id(&self) -> u32 {
        self.ignore_id
    }

    /// Count for ground truth `gt` and prediction `pred`; `pred == C` reads
    /// the unlabeled column.
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * (self.num_classes + 1) + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &[u32], gt: &[u32]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Consistency(format!(
                "{} predictions for {} ground-truth labels",
                pred.len(),
                gt.len()
            )));
        }
        let c = self.num_classes;
        if let Some(&bad) = gt.iter().find(|&&g| g != self.ignore_id && g as usize >= c) {
            return Err(Error::Consistency(format!(
                "ground-truth label {bad} outside [0, {c}) and not the ignore label"
            )));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == self.ignore_id {
                continue;
            }
            let col = if (p as usize) < c { p as usize } else { c };
            self.counts[g as usize * (c + 1) + col] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if (self.num_classes, self.ignore_id) != (other.num_classes, other.ignore_id) {
            return Err(Error::Consistency("cannot merge confusion matrices of different class sets".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn iou(&self) -> IouReport {
        let c = self.num_classes;
        let mut per_class = vec![None; c];
        let mut sum = 0.0;
        let mut n = 0usize;
        for k in 0..c {
            if k as u32 == self.ignore_id {
                continue;
            }
            let tp = self.get(k, k);
            let fn_: u64 = (0..=c).map(|p| self.get(k, p)).sum::<u64>() - tp;
            let fp: u64 = (0..c).map(|g| self.get(g, k)).sum::<u64>() - tp;
            let denom = tp + fp + fn_;
            if denom == 0 {
                continue;
            }
            let v = tp as f64 / denom as f64;
            per_class[k] = Some(v);
            sum += v;
            n += 1;
        }
        IouReport {
            per_class,
            miou: (n > 0).then(|| sum / n as f64),
        }
    }

    /// Fraction of counted elements on the diagonal.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..self.num_classes).map(|k| self.get(k, k)).sum::<u64>() as f64 / total as f64)
    }
}

/// Where the forward pass runs. Only the host CPU is available in this build.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Device {
    Cpu,
    Cuda(usize),
}

impl std::fmt::Display for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Device::Cpu => f.write_str("cpu"),
            Device::Cuda(i) => write!(f, "cuda:{i}"),
        }
    }
}

impl std::str::FromStr for Device {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cpu" => Ok(Device::Cpu),
            "cuda" => Ok(Device::Cuda(0)),
            _ => s
                .strip_prefix("cuda:")
                .and_then(|i| i.parse().ok())
                .map(Device::Cuda)
                .ok_or_else(|| Error::Config(format!("unknown device '{s}' (expected cpu or cuda:N)"))),
        }
    }
}

impl TryFrom<String> for Device {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Device> for String {
    fn from(d: Device) -> String {
        d.to_string()
    }
}

/// Resolves the requested device. Accelerators are not compiled in; with
/// `fallback_to_host` the request degrades to the CPU with a warning,
/// otherwise it is an environment error.
pub fn resolve_device(requested: &Device, fallback_to_host: bool) -> Result<Device> {
    match requested {
        Device::Cpu => Ok(Device::Cpu),
        other if fallback_to_host => {
            log::warn!("device {other} is unavailable in this build, running on cpu");
            Ok(Device::Cpu)
        }
        other => Err(Error::Environment(format!(
            "device {other} is unavailable in this build (only cpu is supported)"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub warmup: usize,
    pub iters: usize,
    /// Timed iterations are split into this many groups; the reported
    /// latency is the median of the group means.
    pub groups: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            warmup: 5,
            iters: 20,
            groups: 5,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup < 5 || self.iters < 20 {
            return Err(Error::Config(format!(
                "benchmark needs warmup >= 5 and iters >= 20, got {} and {}",
                self.warmup, self.iters
            )));
        }
        if self.groups == 0 || self.groups > self.iters {
            return Err(Error::Config(format!("benchmark groups must be in 1..={}", self.iters)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub iters: usize,
    /// Median of group-mean latencies, milliseconds.
    pub latency_ms: f64,
    /// Standard deviation of single-iteration latencies, milliseconds.
    pub latency_std_ms: f64,
    pub fps: f64,
    pub inference_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub device: String,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    /// Plain-text table: kernel size, resolution, latency, FPS.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "Forward pass only (no projection or post-processing), batch 1, device {}\n",
            self.device
        );
        s.push_str(&format!(
            "{:<12} {:<18} {:>24} {:>10}\n",
            "Kernel Size", "Input Resolution", "Model Latency(ms)", "FPS"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<12} {:<18} {:>15.3} ± {:<6.3} {:>10.2}\n",
                format!("{0}x{0}", r.kernel),
                format!("{}x{}", r.height, r.width),
                r.latency_ms,
                r.latency_std_ms,
                r.fps
            ));
        }
        s
    }
}

/// Times eval-mode forward passes of `model` on a fixed random input.
pub fn time_forward(model: &mut CENet, height: usize, width: usize, cfg: &BenchmarkConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = model.config().in_channels;
    let x = Tensor::from_vec(
        [1, c, height, width],
        (0..c * height * width).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    for _ in 0..cfg.warmup {
        std::hint::black_box(model.forward(&x, Mode::Eval)?);
    }
    let mut times = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let t = Instant::now();
        let out = model.forward(&x, Mode::Eval)?;
        // the CPU path is synchronous: the logits are complete on return
        std::hint::black_box(&out.main);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let per_group = cfg.iters / cfg.groups;
    let mut means: Vec<f64> = times
        .chunks(per_group)
        .take(cfg.groups)
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let median = if means.len() % 2 == 1 {
        means[means.len() / 2]
    } else {
        0.5 * (means[means.len() / 2 - 1] + means[means.len() / 2])
    };
    let mean_all = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean_all).powi(2)).sum::<f64>() / times.len() as f64;
    Ok((median, var.sqrt()))
}

/// Builds one model per kernel size from `base` and times it at every
/// resolution.
pub fn benchmark_forward(
    base: &ModelConfig,
    resolutions: &[(usize, usize)],
    kernels: &[usize],
    device: &Device,
    fallback_to_host: bool,
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    let device = resolve_device(device, fallback_to_host)?;
    cfg.validate()?;
    let mut rows = Vec::new();
    for &k in kernels {
        let mc = ModelConfig {
            input_kernel: k,
            ..base.clone()
        };
        let mut model = CENet::new(&mc, cfg.seed)?;
        let params = model.count_parameters(crate::model::ParamScope::Inference);
        for &(h, w) in resolutions {
            let (latency_ms, latency_std_ms) = time_forward(&mut model, h, w, cfg)?;
            log::info!("kernel {k} {h}x{w}: {latency_ms:.3} ms");
            rows.push(BenchmarkRow {
                kernel: k,
                height: h,
                width: w,
                warmup: cfg.warmup,
                iters: cfg.iters,
                latency_ms,
                latency_std_ms,
                fps: 1000.0 / latency_ms,
                inference_params: params,
            });
        }
    }
    Ok(BenchmarkReport {
        device: device.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_swapped() {
        let mut cm = ConfusionMatrix::new(2, 9);
        cm.accumulate(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        let r = cm.iou();
        assert_eq!(r.per_class, vec![Some(1.0), Some(1.0)]);
        assert_eq!(r.miou, Some(1.0));
        let mut cm = ConfusionMatrix::new(2, 9);
        cm.accumulate(&[1, 0, 0], &[0, 1, 1]).unwrap();
        assert_eq!(cm.iou().miou, Some(0.0));
    }

    #[test]
    fn empty_matrix_has_no_miou() {
        let mut cm = ConfusionMatrix::new(3, 0);
        cm.accumulate(&[1, 2], &[0, 0]).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(cm.iou().miou, None);
    }

    #[test]
    fn unlabeled_predictions_are_misses() {
        let mut cm = ConfusionMatrix::new(2, 255);
        cm.accumulate(&[255, 1], &[0, 1]).unwrap();
        let r = cm.iou();
        assert_eq!(r.per_class, vec![Some(0.0), Some(1.0)]);
    }

    #[test]
    fn device_parsing_and_fallback() {
        assert_eq!("cuda:1".parse::<Device>().unwrap(), Device::Cuda(1));
        assert!("tpu".parse::<Device>().is_err());
        assert!(matches!(resolve_device(&Device::Cuda(0), false), Err(Error::Environment(_))));
        assert_eq!(resolve_device(&Device::Cuda(0), true).unwrap(), Device::Cpu);
    }
}
