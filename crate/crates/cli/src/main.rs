use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cenet::eval::{evaluate_prediction_files, evaluate_split, EvalOptions, SpaceMetrics};
use cenet::experiment::{
    config_reference, ensure_dataset, export_projection, infer_scans, load_for_inference, run_ablation, train, AblationPlan,
    ExperimentConfig, InferSettings, TrainOptions,
};
use cenet::io::{load_labels, load_scan, Split};
use cenet::metrics::benchmark_forward;
use cenet::{Error, Result};

#[derive(Parser)]
#[command(name = "cenet", version, about = "Range-image LiDAR semantic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; checkpoints and metrics.jsonl go to runtime.checkpoint_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint (its embedded config must match).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a split and print the metrics record as JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required_unless_present = "offline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: Split,
        /// Carry labels back to points with the KNN vote.
        #[arg(long)]
        knn: bool,
        /// Also write per-point prediction files under this directory.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Score prediction files found under this directory instead of running a model.
        #[arg(long, conflicts_with_all = ["checkpoint", "predictions"])]
        offline: Option<PathBuf>,
        /// Write the record here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict labels for scan files matching a glob.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Glob of scan files, e.g. "data/seq/velodyne/*.bin".
        #[arg(long)]
        scans: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        knn: bool,
    },
    /// Time the forward pass per kernel size and range-image width.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated widths; the height comes from projection.height.
        #[arg(long, value_delimiter = ',')]
        resolutions: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        kernels: Option<Vec<usize>>,
        /// Also write the rows as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write range/remission/label images and a JSON summary of one projected scan.
    Project {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every leg of an ablation plan.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Plan file, or `builtin` / `lambda-sweep` for the bundled plans.
        #[arg(long)]
        plan: String,
        /// Also write the rows as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print (or write) the configuration reference page.
    ConfigDocs {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json(v: &impl serde::Serialize) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Environment(e.to_string()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = train(&cfg, &TrainOptions { resume, ..Default::default() })?;
            println!("epochs completed: {}", outcome.epochs_completed);
            println!("last checkpoint: {}", outcome.last_checkpoint.display());
            if let (Some(p), Some(m), Some(e)) = (&outcome.best_checkpoint, outcome.best_miou, outcome.best_epoch) {
                println!("best checkpoint: {} (val image mIoU {:.4} at epoch {e})", p.display(), m);
            }
        }
        Command::Eval { config, checkpoint, split, knn, predictions, offline, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dataset = ensure_dataset(&cfg)?;
            if let Some(dir) = offline {
                let cm = evaluate_prediction_files(&dataset, split, &dir)?;
                let metrics = SpaceMetrics::from_matrix(&cm, &dataset.classes);
                return emit(out.as_deref(), &to_json(&metrics)?);
            }
            let checkpoint = checkpoint.expect("required unless --offline");
            let (mut model, ck) = load_for_inference(&checkpoint, Some(&cfg))?;
            let knn_cfg = knn.then(|| cfg.knn.clone());
            let opts = EvalOptions {
                knn: knn_cfg,
                batch_size: cfg.eval.batch_size,
                predictions_dir: predictions.as_deref(),
            };
            let ev = evaluate_split(&mut model, &dataset, split, &cfg.projection, &ck.meta.normalization, &opts)?;
            let mut record = ev.record(&dataset.classes, split, knn, ck.meta.config.clone());
            record.epoch = Some(ck.meta.epoch);
            emit(out.as_deref(), &to_json(&record)?)?;
        }
        Command::Infer { config, checkpoint, scans, out, knn } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (mut model, ck) = load_for_inference(&checkpoint, Some(&cfg))?;
            let paths: Vec<PathBuf> = glob::glob(&scans)
                .map_err(|e| Error::Config(format!("bad --scans pattern: {e}")))?
                .filter_map(|p| p.ok())
                .collect();
            if paths.is_empty() {
                return Err(Error::format(&scans, "no scan matches the pattern"));
            }
            let classes = cfg.classes();
            let knn_cfg = (knn || cfg.eval.knn).then(|| cfg.knn.clone());
            let settings = InferSettings {
                projection: &cfg.projection,
                normalization: &ck.meta.normalization,
                classes: &classes,
                knn: knn_cfg.as_ref(),
            };
            let report = infer_scans(&mut model, &paths, &out, &settings)?;
            for s in &report.written {
                println!("{} -> {} ({} points, {:.1} ms)", s.scan.display(), s.output.display(), s.points, 1e3 * s.seconds);
            }
            for s in &report.skipped {
                eprintln!("skipped {}: {}", s.scan.display(), s.reason);
            }
            println!("{} written, {} skipped", report.written.len(), report.skipped.len());
        }
        Command::Benchmark { config, resolutions, kernels, json } => {
            let cfg = ExperimentConfig::load(&config)?;
            let widths = resolutions.unwrap_or_else(|| cfg.benchmark.widths.clone());
            let kernels = kernels.unwrap_or_else(|| cfg.benchmark.kernels.clone());
            let res: Vec<(usize, usize)> = widths.iter().map(|&w| (cfg.projection.height, w)).collect();
            let report = benchmark_forward(
                &cfg.model,
                &res,
                &kernels,
                &cfg.runtime.device,
                cfg.runtime.fallback_to_cpu,
                &cfg.benchmark.timing(cfg.runtime.seed),
            )?;
            print!("{}", report.to_table());
            if let Some(p) = json {
                write_text(&p, &to_json(&report)?)?;
            }
        }
        Command::Project { config, scan, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let mut pc = load_scan(&scan)?;
            // labels live in ../labels/<stem>.label next to the velodyne directory
            let label_path = scan
                .parent()
                .and_then(Path::parent)
                .zip(scan.file_stem())
                .map(|(seq, stem)| seq.join("labels").join(stem).with_extension("label"));
            if let Some(lp) = label_path.filter(|p| p.exists()) {
                let labels = load_labels(&lp, &cfg.classes(), &pc)?;
                pc = pc.with_labels(labels);
            }
            let side = export_projection(&pc, &scan, &cfg.projection, &out)?;
            println!(
                "{} points, {} projected, {} valid pixels, {} occluded; wrote {}",
                side.points,
                side.projected_points,
                side.valid_pixels,
                side.occluded_points,
                side.files.join(", ")
            );
        }
        Command::Ablate { config, plan, json } => {
            let cfg = ExperimentConfig::load(&config)?;
            let plan = match plan.as_str() {
                "builtin" => AblationPlan::builtin(),
                "lambda-sweep" => AblationPlan::lambda_sweep(&[0.0, 0.1, 0.5, 1.0]),
                path => AblationPlan::load(path)?,
            };
            let report = run_ablation(&plan, &cfg)?;
            print!("{}", report.to_table());
            if let Some(p) = json {
                write_text(&p, &to_json(&report)?)?;
            }
        }
        Command::ConfigDocs { out } => emit(out.as_deref(), &config_reference())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
