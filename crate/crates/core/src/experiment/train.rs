use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_split, prepare_scan, EvalOptions, MetricsRecord, PreparedScan};
use crate::experiment::checkpoint::{Checkpoint, CheckpointMeta};
use crate::experiment::config::{ExperimentConfig, NormalizationMode};
use crate::io::{augment, derive_sample_seed, make_toy_dataset, Dataset, Sample, Split};
use crate::loss::{batch_loss, LossBreakdown, LossConfig};
use crate::metrics::resolve_device;
use crate::model::{CENet, Mode};
use crate::nn::{Module, Tensor};
use crate::optim::{LrSchedule, Sgd};
use crate::projection::{spherical_project, InputNormalization};

pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const METRICS_LOG: &str = "metrics.jsonl";

/// Knobs that change how a run is driven but not what it computes.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs in this invocation (simulates an
    /// interruption; the run can be resumed from `last.safetensors`).
    pub max_epochs_this_run: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean over the epoch's batches.
    pub train_loss: LossBreakdown,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<MetricsRecord>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    /// Epochs completed in total, counting resumed ones.
    pub epochs_completed: usize,
    pub best_miou: Option<f64>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub normalization: InputNormalization,
}

/// Generates the synthetic set when the config asks for it and the
/// training split is empty.
pub fn ensure_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dataset = cfg.open_dataset()?;
    if let Some(gen) = &cfg.dataset.generate {
        if dataset.samples(Split::Train)?.is_empty() {
            log::info!("generating {} synthetic scans under {}", gen.n_scans, dataset.root.display());
            make_toy_dataset(&dataset.root, gen)?;
        }
    }
    Ok(dataset)
}

/// Label counts over the training split.
fn class_counts(dataset: &Dataset, samples: &[Sample]) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; dataset.classes.num_classes];
    for s in samples {
        if let Some(labels) = dataset.load(s)?.labels {
            for l in labels {
                if let Some(c) = counts.get_mut(l as usize) {
                    *c += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Normalization statistics for a run: the fixed values, or measured on
/// the un-augmented training scans.
pub fn resolve_normalization(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<InputNormalization> {
    match cfg.normalization.mode {
        NormalizationMode::Fixed => Ok(cfg.normalization.fixed()),
        NormalizationMode::Estimate => {
            let images = dataset
                .samples(Split::Train)?
                .iter()
                .map(|s| Ok(spherical_project(&dataset.load(s)?, &cfg.projection)))
                .collect::<Result<Vec<_>>>()?;
            Ok(InputNormalization::estimate(&images))
        }
    }
}

/// The loss config actually optimized: empty class weights are filled from
/// the class table.
pub fn resolve_loss(cfg: &ExperimentConfig, dataset: &Dataset) -> LossConfig {
    let mut loss = cfg.loss.clone();
    if loss.class_weights.is_empty() {
        loss.class_weights = dataset.classes.class_weights();
    }
    loss
}

fn append_jsonl(file: &mut File, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    writeln!(file, "{line}").map_err(|e| Error::Environment(format!("writing metrics log: {e}")))
}

/// One pass of SGD over a list of scans. Returns the mean loss breakdown.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    model: &mut CENet,
    opt: &mut Sgd,
    schedule: &LrSchedule,
    step: &mut usize,
    cfg: &ExperimentConfig,
    loss_cfg: &LossConfig,
    dataset: &Dataset,
    samples: &[Sample],
    norm: &InputNormalization,
    epoch: usize,
) -> Result<(LossBreakdown, f64)> {
    let seed = cfg.runtime.seed;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_sample_seed(seed, epoch as u64, u64::MAX)));
    let aug = &cfg.augmentation;
    let augmenting = aug.rotation.enabled || aug.dropout.enabled || aug.jitter.enabled;
    let ignore = dataset.classes.ignore_id;

    let mut mean = LossBreakdown::default();
    let mut batches = 0usize;
    let mut lr = schedule.lr(*step);
    for chunk in order.chunks(cfg.runtime.batch_size) {
        let mut prepared: Vec<PreparedScan> = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let mut pc = dataset.load(&samples[i])?;
            if augmenting {
                pc = augment(&pc, aug, derive_sample_seed(seed, epoch as u64, i as u64));
            }
            prepared.push(prepare_scan(&pc, &cfg.projection, norm, ignore));
        }
        let targets = prepared
            .iter()
            .zip(chunk)
            .map(|(p, &i)| {
                p.target
                    .clone()
                    .ok_or_else(|| Error::Consistency(format!("training scan {} has no labels", samples[i].scan.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<_> = prepared.into_iter().map(|p| p.input).collect();
        let x = Tensor::stack(&inputs);

        let out = model.forward(&x, Mode::Train)?;
        let (breakdown, grads) = batch_loss(&out, &targets, loss_cfg, cfg.model.aux_mode)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Consistency(format!("non-finite loss at epoch {epoch}, step {step}")));
        }
        model.zero_grad();
        model.backward(&grads)?;
        lr = schedule.lr(*step);
        opt.step(model, lr);
        *step += 1;

        if batches == 0 {
            mean.aux_terms = vec![0.0; breakdown.aux_terms.len()];
        }
        mean.wce += breakdown.wce;
        mean.lovasz += breakdown.lovasz;
        mean.boundary += breakdown.boundary;
        mean.main += breakdown.main;
        mean.total += breakdown.total;
        for (a, v) in mean.aux_terms.iter_mut().zip(&breakdown.aux_terms) {
            *a += v;
        }
        batches += 1;
        if cfg.runtime.log_interval > 0 && *step % cfg.runtime.log_interval == 0 {
            log::info!(
                "epoch {epoch} step {step} lr {lr:.3e} loss {:.4} (wce {:.4} lovasz {:.4} boundary {:.4})",
                breakdown.total,
                breakdown.wce,
                breakdown.lovasz,
                breakdown.boundary
            );
        }
    }
    let n = batches.max(1) as f64;
    mean.wce /= n;
    mean.lovasz /= n;
    mean.boundary /= n;
    mean.main /= n;
    mean.total /= n;
    mean.aux_terms.iter_mut().for_each(|a| *a /= n);
    Ok((mean, lr))
}

/// Trains according to `cfg`, writing `last.safetensors` every epoch,
/// `best.safetensors` whenever the validation image-space mIoU improves,
/// and one JSON line per epoch to `metrics.jsonl`, all under
/// `runtime.checkpoint_dir`.
pub fn train(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    resolve_device(&cfg.runtime.device, cfg.runtime.fallback_to_cpu)?;
    let mut dataset = ensure_dataset(cfg)?;
    let train_samples = dataset.samples(Split::Train)?;
    if train_samples.is_empty() {
        return Err(Error::Consistency(format!(
            "no training scans under {}",
            dataset.root.display()
        )));
    }
    if cfg.dataset.estimate_frequencies {
        let counts = class_counts(&dataset, &train_samples)?;
        dataset.classes = dataset.classes.clone().with_frequencies_from_counts(&counts);
    }
    let loss_cfg = resolve_loss(cfg, &dataset);
    let has_val = !dataset.samples(Split::Val)?.is_empty();

    let dir = cfg.runtime.checkpoint_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut model = CENet::new(&cfg.model, cfg.runtime.seed)?;
    let mut opt = Sgd::new(&cfg.optimizer);
    let steps_per_epoch = train_samples.len().div_ceil(cfg.runtime.batch_size);
    let schedule = LrSchedule::new(&cfg.optimizer, steps_per_epoch);

    let (mut epoch, mut step, mut best_miou, mut best_epoch, norm) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.ensure_config_matches(cfg)?;
            ck.apply_to(&mut model)?;
            opt.set_velocity(ck.velocity.clone());
            log::info!("resuming from {} after epoch {}", path.display(), ck.meta.epoch);
            (ck.meta.epoch, ck.meta.step, ck.meta.best_miou, ck.meta.best_epoch, ck.meta.normalization.clone())
        }
        None => (0, 0, None, None, resolve_normalization(cfg, &dataset)?),
    };

    let log_path = dir.join(METRICS_LOG);
    let mut log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(opts.resume.is_some())
        .truncate(opts.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let echo = cfg.echo();
    append_jsonl(
        &mut log_file,
        &serde_json::json!({ "event": "start", "epoch": epoch, "step": step, "config": echo }),
    )?;

    let mut history = Vec::new();
    let last_path = dir.join(LAST_CHECKPOINT);
    let best_path = dir.join(BEST_CHECKPOINT);
    let mut ran = 0usize;
    while epoch < cfg.optimizer.epochs {
        if opts.max_epochs_this_run.is_some_and(|m| ran >= m) {
            break;
        }
        let t0 = Instant::now();
        let (train_loss, lr) = run_epoch(
            &mut model, &mut opt, &schedule, &mut step, cfg, &loss_cfg, &dataset, &train_samples, &norm, epoch,
        )?;
        epoch += 1;
        ran += 1;

        let every = cfg.eval.every;
        let val = if has_val && every > 0 && (epoch % every == 0 || epoch == cfg.optimizer.epochs) {
            let eval = evaluate_split(
                &mut model,
                &dataset,
                Split::Val,
                &cfg.projection,
                &norm,
                &EvalOptions {
                    knn: cfg.eval.knn.then(|| cfg.knn.clone()),
                    batch_size: cfg.eval.batch_size,
                    predictions_dir: None,
                },
            )?;
            let mut rec = eval.record(&dataset.classes, Split::Val, cfg.eval.knn, echo.clone());
            rec.epoch = Some(epoch);
            Some(rec)
        } else {
            None
        };
        let val_miou = val.as_ref().and_then(|v| v.image_space.miou);
        let improved = val_miou.is_some_and(|m| best_miou.map_or(true, |b| m > b));
        if improved {
            best_miou = val_miou;
            best_epoch = Some(epoch);
        }

        let meta = CheckpointMeta {
            config: echo.clone(),
            epoch,
            step,
            normalization: norm.clone(),
            best_miou,
            best_epoch,
        };
        let ck = Checkpoint::capture(&model, opt.velocity(), meta);
        ck.save(&last_path)?;
        if improved {
            ck.save(&best_path)?;
        }

        let record = EpochRecord {
            epoch,
            step,
            lr,
            train_loss,
            seconds: t0.elapsed().as_secs_f64(),
            val,
        };
        log::info!(
            "epoch {epoch}/{} loss {:.4} val mIoU {} ({:.1}s)",
            cfg.optimizer.epochs,
            record.train_loss.total,
            val_miou.map_or("n/a".to_string(), |m| format!("{:.4}", m)),
            record.seconds
        );
        append_jsonl(&mut log_file, &serde_json::json!({ "event": "epoch", "record": record }))?;
        history.push(record);

        if let (Some(target), Some(m)) = (cfg.runtime.stop_at_miou, val_miou) {
            if m >= target {
                log::info!("validation mIoU {m:.4} reached the stop threshold {target}");
                break;
            }
        }
    }

    Ok(TrainOutcome {
        last_checkpoint: last_path,
        best_checkpoint: best_path.is_file().then_some(best_path),
        epochs_completed: epoch,
        best_miou,
        best_epoch,
        history,
        normalization: norm,
    })
}

/// Loads a checkpoint for evaluation or inference, checking it against the
/// class table of `cfg` when one is given.
pub fn load_for_inference(path: &Path, cfg: Option<&ExperimentConfig>) -> Result<(CENet, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let embedded = ck.config()?;
    if let Some(cfg) = cfg {
        if cfg.model.num_classes != embedded.model.num_classes {
            return Err(Error::Consistency(format!(
                "config has {} classes but the checkpoint was trained with {}",
                cfg.model.num_classes, embedded.model.num_classes
            )));
        }
    }
    let model = ck.build_model()?;
    Ok((model, ck))
}
