//! Experiment configuration, checkpoints, the training loop and ablations.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod docs;
pub mod infer;
pub mod train;

pub use ablation::{run_ablation, AblationDelta, AblationPlan, AblationReport, AblationRow};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{config_diff, ExperimentConfig, NormalizationMode, Preset, DATASET_ROOT_ENV};
pub use docs::config_reference;
pub use infer::{export_projection, infer_scans, InferReport, InferSettings, ProjectionSidecar};
pub use train::{ensure_dataset, load_for_inference, train, EpochRecord, TrainOptions, TrainOutcome};
