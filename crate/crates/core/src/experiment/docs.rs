//! Generated reference page for every configuration key.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::experiment::config::{ExperimentConfig, Preset, DATASET_ROOT_ENV};

const KEYS: &[(&str, &str)] = &[
    ("preset", "Base preset the file is merged onto: `kitti` (default), `poss` or `toy`. Only valid at the top level."),
    ("dataset.root", "Dataset directory (`sequences/NN/velodyne`, `sequences/NN/labels`). Overridden by the environment variable."),
    ("dataset.kind", "`semantic_kitti`, `semantic_poss` or `toy`; selects the class table and default splits."),
    ("dataset.toy_classes", "Number of classes of the synthetic class table (ignore class included)."),
    ("dataset.splits.train", "Sequence IDs of the training split; the whole `splits` table replaces the kind's default."),
    ("dataset.splits.val", "Sequence IDs of the validation split."),
    ("dataset.splits.test", "Sequence IDs of the test split."),
    ("dataset.estimate_frequencies", "Recompute class frequencies (and so the cross-entropy weights) from the training labels."),
    ("dataset.generate.n_scans", "Synthetic scans to generate when the training split is empty."),
    ("dataset.generate.n_classes", "Classes of the synthetic scenes, ignore class included."),
    ("dataset.generate.seed", "Seed of the scene generator."),
    ("dataset.generate.rows", "Beams of the simulated sensor."),
    ("dataset.generate.cols", "Azimuth samples per beam."),
    ("dataset.generate.fov_up_deg", "Upper vertical field of view of the simulated sensor, degrees."),
    ("dataset.generate.fov_down_deg", "Lower vertical field of view of the simulated sensor, degrees (positive = below horizon)."),
    ("dataset.generate.val_fraction", "Share of generated scans put in the validation sequence."),
    ("dataset.generate.test_fraction", "Share of generated scans put in the test sequence."),
    ("projection.height", "Range-image rows."),
    ("projection.width", "Range-image columns."),
    ("projection.fov_up_deg", "Upper vertical field of view, degrees."),
    ("projection.fov_down_deg", "Lower vertical field of view, degrees (positive = below horizon)."),
    ("normalization.mode", "`fixed` uses `mean`/`std` as given, `estimate` measures them on the training split."),
    ("normalization.mean", "Per-channel mean of x, y, z, range, remission."),
    ("normalization.std", "Per-channel standard deviation of x, y, z, range, remission."),
    ("model.in_channels", "Input channels of the range image."),
    ("model.num_classes", "Output classes, ignore class included; must match the class table."),
    ("model.activation", "`relu`, `silu` or `hardswish`."),
    ("model.input_kernel", "Kernel of the stem and head conv blocks: 1 or 3."),
    ("model.stem_channels", "Widths of the three stem conv blocks."),
    ("model.stage_channels", "Width of each of the four residual stages."),
    ("model.stage_blocks", "Residual blocks per stage."),
    ("model.stage_strides", "Cumulative output stride of each stage."),
    ("model.head_channels", "Widths of the two head conv blocks."),
    ("model.aux_mode", "Auxiliary heads during training: `none`, `plan_a` (native stage resolution) or `plan_b` (upsampled to full resolution)."),
    ("model.aux_stages", "1-based stages carrying auxiliary heads."),
    ("loss.alpha", "Weight of the weighted cross-entropy term."),
    ("loss.beta", "Weight of the Lovász-softmax term."),
    ("loss.gamma", "Weight of the boundary term."),
    ("loss.lambda_aux", "Weight of each auxiliary-head loss."),
    ("loss.theta0", "Odd max-pooling window of the boundary extraction."),
    ("loss.class_weights", "Per-class cross-entropy weights; empty derives them from class frequencies."),
    ("loss.ignore_id", "Label excluded from every loss term; must match the class table."),
    ("optimizer.kind", "Optimizer; only `sgd`."),
    ("optimizer.momentum", "SGD momentum."),
    ("optimizer.weight_decay", "L2 weight decay applied to every trainable parameter."),
    ("optimizer.schedule", "`cosine` (one annealing from `lr_max` to `lr_min`) or `cyclic` (restarted `cycles` times)."),
    ("optimizer.lr_max", "Learning rate at the start of each cycle."),
    ("optimizer.lr_min", "Learning rate at the end of each cycle."),
    ("optimizer.epochs", "Training epochs."),
    ("optimizer.cycles", "Cosine cycles of the cyclic schedule; must divide `epochs`."),
    ("augmentation.rotation.enabled", "Random rotation about the vertical axis."),
    ("augmentation.rotation.max_yaw", "Largest rotation magnitude, radians."),
    ("augmentation.dropout.enabled", "Random point dropout."),
    ("augmentation.dropout.min_prob", "Lower bound of the per-scan dropout probability."),
    ("augmentation.dropout.max_prob", "Upper bound of the per-scan dropout probability."),
    ("augmentation.jitter.enabled", "Gaussian jitter of point coordinates."),
    ("augmentation.jitter.sigma", "Jitter standard deviation, meters."),
    ("augmentation.jitter.clip", "Jitter magnitude clip, meters."),
    ("knn.k", "Maximum number of voting neighbors."),
    ("knn.window", "Odd side of the pixel search window."),
    ("knn.range_cutoff", "Neighbors farther than this in range (meters) do not vote."),
    ("knn.gaussian_sigma", "Width of the Gaussian range weighting of votes."),
    ("knn.relabel_visible", "Also re-vote points stored in their own pixel."),
    ("eval.knn", "Use KNN post-processing in validation during training."),
    ("eval.batch_size", "Scans per evaluation forward pass."),
    ("eval.every", "Validate every N epochs (0: only after the last epoch)."),
    ("runtime.seed", "Seed for weights, shuffling and augmentation."),
    ("runtime.batch_size", "Scans per training step."),
    ("runtime.workers", "Accepted for compatibility; loading is sequential."),
    ("runtime.device", "`cpu`, `cuda` or `cuda:N`."),
    ("runtime.fallback_to_cpu", "Downgrade an unavailable device to the CPU with a warning instead of failing."),
    ("runtime.checkpoint_dir", "Where checkpoints and the metrics log are written."),
    ("runtime.log_interval", "Log the training loss every N steps."),
    ("runtime.stop_at_miou", "Stop once validation image-space mIoU reaches this value."),
    ("benchmark.warmup", "Untimed forward passes before timing (>= 5)."),
    ("benchmark.iters", "Timed forward passes (>= 20)."),
    ("benchmark.groups", "Groups the timed passes are split into; the reported latency is the median of group means."),
    ("benchmark.widths", "Default range-image widths of the `benchmark` command."),
    ("benchmark.kernels", "Default stem/head kernels of the `benchmark` command."),
];

/// Dotted leaf keys of a config and their values. Optional tables that are
/// unset do not appear.
fn leaves(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, String>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, x, out);
                }
            }
            serde_json::Value::Null => {}
            _ => {
                out.insert(prefix.to_string(), v.to_string());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", &cfg.echo(), &mut out);
    out
}

/// Markdown reference: one row per key with its default in each preset
/// (`-` marks a key that is unset there).
pub fn config_reference() -> String {
    let presets = [Preset::Kitti, Preset::Poss, Preset::Toy];
    let values: Vec<BTreeMap<String, String>> = presets.iter().map(|p| leaves(&p.config())).collect();
    let mut s = String::new();
    s.push_str("# Configuration reference\n\n");
    s.push_str(
        "Configs are TOML files. Every key is optional: a file is merged onto the preset named by its top-level \
         `preset` key, and unknown keys are rejected.\n",
    );
    let _ = writeln!(s, "The environment variable `{DATASET_ROOT_ENV}`, when set, replaces `dataset.root`.\n");
    s.push_str("| Key | kitti | poss | toy | Description |\n|---|---|---|---|---|\n");
    for (key, doc) in KEYS {
        let cell = |m: &BTreeMap<String, String>| m.get(*key).map_or("-".to_string(), |v| format!("`{v}`"));
        let _ = writeln!(s, "| `{key}` | {} | {} | {} | {doc} |", cell(&values[0]), cell(&values[1]), cell(&values[2]));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_documented_and_exists() {
        let documented: std::collections::HashSet<&str> = KEYS.iter().map(|(k, _)| *k).collect();
        for p in [Preset::Kitti, Preset::Poss, Preset::Toy] {
            for key in leaves(&p.config()).keys() {
                assert!(documented.contains(key.as_str()), "{key} is undocumented");
            }
        }
        let mut with_splits = Preset::Toy.config();
        with_splits.dataset.splits = Some(crate::io::SplitSpec::toy());
        with_splits.runtime.stop_at_miou = Some(0.9);
        let known = leaves(&with_splits);
        for (k, _) in KEYS {
            assert!(*k == "preset" || known.contains_key(*k), "{k} is documented but not a key");
        }
    }

    #[test]
    fn reference_lists_defaults() {
        let page = config_reference();
        assert!(page.contains("| `optimizer.lr_max` | `0.01` | `0.001` | `0.05` |"));
    }
}
