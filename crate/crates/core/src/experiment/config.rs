use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{AugmentationConfig, ClassConfig, Dataset, DatasetKind, SplitSpec, ToyConfig, TOY_IGNORE_ID};
use crate::loss::LossConfig;
use crate::metrics::{BenchmarkConfig, Device};
use crate::model::{AuxMode, ModelConfig};
use crate::optim::{OptimizerConfig, ScheduleKind};
use crate::projection::{InputNormalization, KnnConfig, ProjectionConfig};

/// Environment variable that replaces `dataset.root` when set.
pub const DATASET_ROOT_ENV: &str = "DATASET_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetBlock {
    pub root: PathBuf,
    pub kind: DatasetKind,
    /// Class count of the synthetic set; ignored for real datasets.
    pub toy_classes: usize,
    /// Sequence lists per split; the dataset kind's standard split when absent.
    pub splits: Option<SplitSpec>,
    /// Recompute class frequencies (and so cross-entropy weights) from the
    /// training labels instead of using the built-in table.
    pub estimate_frequencies: bool,
    /// When set and `root` holds no scans, a synthetic set is generated there.
    pub generate: Option<ToyConfig>,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data/semantic_kitti"),
            kind: DatasetKind::SemanticKitti,
            toy_classes: 4,
            splits: None,
            estimate_frequencies: false,
            generate: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Use `mean` and `std` as given.
    Fixed,
    /// Measure them over the projected training scans before training.
    Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizationBlock {
    pub mode: NormalizationMode,
    pub mean: [f32; 5],
    pub std: [f32; 5],
}

impl Default for NormalizationBlock {
    fn default() -> Self {
        let n = InputNormalization::semantic_kitti();
        Self {
            mode: NormalizationMode::Fixed,
            mean: n.mean,
            std: n.std,
        }
    }
}

impl NormalizationBlock {
    pub fn fixed(&self) -> InputNormalization {
        InputNormalization {
            mean: self.mean,
            std: self.std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    /// Refine point labels with the KNN vote (parameters in `[knn]`).
    pub knn: bool,
    pub batch_size: usize,
    /// Evaluate on the validation split every this many epochs (0 = never).
    pub every: usize,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            knn: false,
            batch_size: 1,
            every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeBlock {
    pub seed: u64,
    pub batch_size: usize,
    /// Data-loading workers. Loading is sequential in this build; the value
    /// is accepted for config compatibility.
    pub workers: usize,
    pub device: Device,
    /// Run on the CPU instead of failing when `device` is unavailable.
    pub fallback_to_cpu: bool,
    pub checkpoint_dir: PathBuf,
    /// Log a training line every this many steps.
    pub log_interval: usize,
    /// Stop once the validation image-space mIoU reaches this value.
    pub stop_at_miou: Option<f64>,
}

impl Default for RuntimeBlock {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 8,
            workers: 0,
            device: Device::Cpu,
            fallback_to_cpu: true,
            checkpoint_dir: PathBuf::from("runs/default"),
            log_interval: 50,
            stop_at_miou: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkBlock {
    pub warmup: usize,
    pub iters: usize,
    /// Timed iterations are split into this many groups; latency is the
    /// median of the group means.
    pub groups: usize,
    /// Range-image widths to time; the height comes from `[projection]`.
    pub widths: Vec<usize>,
    pub kernels: Vec<usize>,
}

impl Default for BenchmarkBlock {
    fn default() -> Self {
        let t = BenchmarkConfig::default();
        Self {
            warmup: t.warmup,
            iters: t.iters,
            groups: t.groups,
            widths: vec![512, 1024, 2048],
            kernels: vec![1, 3],
        }
    }
}

impl BenchmarkBlock {
    pub fn timing(&self, seed: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            warmup: self.warmup,
            iters: self.iters,
            groups: self.groups,
            seed,
        }
    }
}

/// Everything a run needs, read from one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetBlock,
    pub projection: ProjectionConfig,
    pub normalization: NormalizationBlock,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub augmentation: AugmentationConfig,
    pub knn: KnnConfig,
    pub eval: EvalBlock,
    pub runtime: RuntimeBlock,
    pub benchmark: BenchmarkBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Preset::Kitti.config()
    }
}

/// Built-in starting points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 64×2048 SemanticKITTI, 100 epochs of cosine-annealed SGD from 1e-2.
    Kitti,
    /// 40×1800 SemanticPOSS, three 45-epoch cycles between 1e-5 and 1e-3.
    Poss,
    /// Synthetic 4-class set at 64×512 with a narrow network.
    Toy,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kitti" | "semantic_kitti" => Ok(Preset::Kitti),
            "poss" | "semantic_poss" => Ok(Preset::Poss),
            "toy" => Ok(Preset::Toy),
            _ => Err(Error::Config(format!("unknown preset '{s}' (kitti, poss, toy)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Kitti => "kitti",
            Preset::Poss => "poss",
            Preset::Toy => "toy",
        })
    }
}

impl Preset {
    pub fn config(self) -> ExperimentConfig {
        let kitti = ExperimentConfig {
            dataset: DatasetBlock::default(),
            projection: ProjectionConfig::semantic_kitti(2048),
            normalization: NormalizationBlock::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            augmentation: AugmentationConfig::default(),
            knn: KnnConfig::default(),
            eval: EvalBlock::default(),
            runtime: RuntimeBlock::default(),
            benchmark: BenchmarkBlock::default(),
        };
        match self {
            Preset::Kitti => kitti,
            Preset::Poss => ExperimentConfig {
                dataset: DatasetBlock {
                    root: PathBuf::from("data/semantic_poss"),
                    kind: DatasetKind::SemanticPoss,
                    ..DatasetBlock::default()
                },
                projection: ProjectionConfig {
                    height: 40,
                    width: 1800,
                    fov_up_deg: 7.0,
                    fov_down_deg: 16.0,
                },
                normalization: NormalizationBlock {
                    mode: NormalizationMode::Estimate,
                    ..NormalizationBlock::default()
                },
                model: ModelConfig {
                    num_classes: 14,
                    ..ModelConfig::default()
                },
                optimizer: OptimizerConfig {
                    schedule: ScheduleKind::Cyclic,
                    lr_max: 1e-3,
                    lr_min: 1e-5,
                    epochs: 135,
                    cycles: 3,
                    ..OptimizerConfig::default()
                },
                eval: EvalBlock {
                    every: 0,
                    ..EvalBlock::default()
                },
                runtime: RuntimeBlock {
                    checkpoint_dir: PathBuf::from("runs/poss"),
                    ..RuntimeBlock::default()
                },
                ..kitti
            },
            Preset::Toy => {
                let toy = ToyConfig::default();
                ExperimentConfig {
                    dataset: DatasetBlock {
                        root: PathBuf::from("data/toy"),
                        kind: DatasetKind::Toy,
                        toy_classes: toy.n_classes,
                        generate: Some(toy.clone()),
                        ..DatasetBlock::default()
                    },
                    projection: ProjectionConfig {
                        height: toy.rows,
                        width: toy.cols,
                        fov_up_deg: toy.fov_up_deg,
                        fov_down_deg: toy.fov_down_deg,
                    },
                    normalization: NormalizationBlock {
                        mode: NormalizationMode::Estimate,
                        ..NormalizationBlock::default()
                    },
                    model: ModelConfig::toy(toy.n_classes),
                    loss: LossConfig {
                        ignore_id: TOY_IGNORE_ID,
                        ..LossConfig::default()
                    },
                    optimizer: OptimizerConfig {
                        lr_max: 0.05,
                        lr_min: 1e-4,
                        epochs: 30,
                        ..OptimizerConfig::default()
                    },
                    augmentation: AugmentationConfig::disabled(),
                    runtime: RuntimeBlock {
                        checkpoint_dir: PathBuf::from("runs/toy"),
                        log_interval: 10,
                        ..RuntimeBlock::default()
                    },
                    benchmark: BenchmarkBlock::default(),
                    ..kitti
                }
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and applies the `DATASET_ROOT` override. A
    /// top-level `preset = "..."` key selects the defaults that the rest of
    /// the file overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_with_preset(&text)?;
        cfg.apply_env();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_with_preset(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match table.remove("preset") {
            None => Preset::Kitti,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(v) => return Err(Error::Config(format!("preset must be a string, got {v}"))),
        };
        let mut base = toml::Table::try_from(preset.config()).map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut base, table);
        toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply_env(&mut self) {
        if let Ok(root) = std::env::var(DATASET_ROOT_ENV) {
            if !root.is_empty() {
                self.dataset.root = PathBuf::from(root);
            }
        }
    }

    pub fn classes(&self) -> ClassConfig {
        self.dataset.kind.default_classes(self.dataset.toy_classes)
    }

    pub fn splits(&self) -> SplitSpec {
        self.dataset.splits.clone().unwrap_or_else(|| self.dataset.kind.default_splits())
    }

    pub fn open_dataset(&self) -> Result<Dataset> {
        Dataset::new(&self.dataset.root, self.classes(), self.splits())
    }

    /// Checks each block and the agreements between them.
    pub fn validate(&self) -> Result<()> {
        let classes = self.classes();
        classes.validate()?;
        self.splits().validate()?;
        self.projection.validate()?;
        self.model.validate()?;
        self.loss.validate(Some(self.model.num_classes))?;
        self.optimizer.validate()?;
        self.augmentation.validate()?;
        self.knn.validate()?;
        if self.model.num_classes != classes.num_classes {
            return Err(Error::Config(format!(
                "model.num_classes = {} but the {} class table has {}",
                self.model.num_classes, classes.name, classes.num_classes
            )));
        }
        if self.loss.ignore_id != classes.ignore_id {
            return Err(Error::Config(format!(
                "loss.ignore_id = {} but the {} class table ignores {}",
                self.loss.ignore_id, classes.name, classes.ignore_id
            )));
        }
        let stride = self.model.max_stride();
        if self.projection.height % stride != 0 || self.projection.width % stride != 0 {
            return Err(Error::Config(format!(
                "projection {}x{} is not divisible by the model's output stride {stride}",
                self.projection.height, self.projection.width
            )));
        }
        if self.normalization.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("normalization.std entries must be > 0".into()));
        }
        if self.runtime.batch_size == 0 || self.eval.batch_size == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.model.aux_mode == AuxMode::None && self.loss.lambda_aux != 0.0 {
            log::debug!("loss.lambda_aux is unused without auxiliary heads");
        }
        if let Some(g) = &self.dataset.generate {
            if g.n_classes != classes.num_classes || self.dataset.kind != DatasetKind::Toy {
                return Err(Error::Config(
                    "dataset.generate needs kind = \"toy\" and n_classes equal to toy_classes".into(),
                ));
            }
        }
        self.benchmark.timing(self.runtime.seed).validate()?;
        Ok(())
    }

    /// Canonical JSON form stored in checkpoints and metrics records.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Overlays `over` onto `base`, recursing into tables.
fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Lines of the form `path: a -> b` for every leaf that differs.
pub fn config_diff(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    let mut out = Vec::new();
    diff_rec("", a, b, &mut out);
    out
}

fn diff_rec(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => diff_rec(&p, u, v, out),
                    (u, v) => out.push(format!("{p}: {} -> {}", show(u), show(v))),
                }
            }
        }
        _ if a != b => out.push(format!("{path}: {a} -> {b}")),
        _ => {}
    }
}

fn show(v: Option<&serde_json::Value>) -> String {
    v.map_or_else(|| "(absent)".to_string(), |v| v.to_string())
}
