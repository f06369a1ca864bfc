//! Ablation runs: train and evaluate a list of named config deltas and
//! tabulate accuracy, parameter counts and forward latency side by side.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::train::{train, TrainOptions};
use crate::metrics::time_forward;
use crate::model::{AuxMode, CENet, ParamScope};
use crate::nn::Activation;

/// Overrides applied to the base config for one leg. Unset fields keep the
/// base value, so an empty delta reproduces the base run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationDelta {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_mode: Option<AuxMode>,
    /// Weight of the auxiliary losses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl AblationDelta {
    fn new(name: &str, kernel: usize, activation: Activation, aux: AuxMode) -> Self {
        Self {
            name: name.into(),
            input_kernel: Some(kernel),
            activation: Some(activation),
            aux_mode: Some(aux),
            lambda: None,
        }
    }

    /// The base config with this delta applied, validated.
    pub fn apply(&self, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        if let Some(k) = self.input_kernel {
            cfg.model.input_kernel = k;
        }
        if let Some(a) = self.activation {
            cfg.model.activation = a;
        }
        if let Some(m) = self.aux_mode {
            cfg.model.aux_mode = m;
        }
        if let Some(l) = self.lambda {
            cfg.loss.lambda_aux = l;
        }
        cfg.validate()
            .map_err(|e| Error::Config(format!("ablation leg '{}': {e}", self.name)))?;
        Ok(cfg)
    }

    /// Directory-safe form of the name.
    pub fn slug(&self) -> String {
        let s: String = self
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect();
        if s.is_empty() {
            "base".into()
        } else {
            s
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPlan {
    #[serde(default, rename = "leg")]
    pub legs: Vec<AblationDelta>,
}

impl AblationPlan {
    /// Parses a plan of `[[leg]]` tables.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::Config(format!("ablation plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.legs.is_empty() {
            return Err(Error::Config("ablation plan has no legs".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for leg in &self.legs {
            if !seen.insert(leg.slug()) {
                return Err(Error::Config(format!("duplicate ablation leg name '{}'", leg.name)));
            }
            if let Some(l) = leg.lambda {
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(Error::Config(format!("leg '{}': lambda must be >= 0, got {l}", leg.name)));
                }
            }
        }
        Ok(())
    }

    /// Kernel size, activation and auxiliary-head design toggled from a
    /// 1x1 / ReLU / no-aux baseline, one row per combination studied.
    pub fn builtin() -> Self {
        use Activation::*;
        use AuxMode::*;
        let legs = vec![
            AblationDelta::new("baseline", 1, Relu, None),
            AblationDelta::new("3x3", 3, Relu, None),
            AblationDelta::new("silu", 1, Silu, None),
            AblationDelta::new("hardswish", 1, Hardswish, None),
            AblationDelta::new("3x3+silu", 3, Silu, None),
            AblationDelta::new("3x3+hardswish", 3, Hardswish, None),
            AblationDelta::new("plan_a", 1, Relu, PlanA),
            AblationDelta::new("plan_b", 1, Relu, PlanB),
            AblationDelta::new("3x3+plan_a", 3, Relu, PlanA),
            AblationDelta::new("3x3+plan_b", 3, Relu, PlanB),
            AblationDelta::new("3x3+hardswish+plan_b", 3, Hardswish, PlanB),
        ];
        Self { legs }
    }

    /// Auxiliary-loss weight sweep on the full model.
    pub fn lambda_sweep(values: &[f64]) -> Self {
        let legs = values
            .iter()
            .map(|&l| AblationDelta {
                lambda: Some(l),
                ..AblationDelta::new(&format!("lambda={l}"), 3, Activation::Hardswish, AuxMode::PlanB)
            })
            .collect();
        Self { legs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    /// Best validation image-space mIoU; `None` when the leg failed or no
    /// class had support.
    pub miou: Option<f64>,
    pub train_params: Option<usize>,
    pub inference_params: Option<usize>,
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AblationRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$} | {:>7} | {:>12} | {:>16} | {:>12}",
            "Delta", "mIoU", "Train params", "Inference params", "Latency(ms)"
        );
        let _ = writeln!(s, "{}", "-".repeat(width + 61));
        for r in &self.rows {
            if let Some(e) = &r.error {
                let _ = writeln!(s, "{:<width$} | FAILED: {e}", r.name);
                continue;
            }
            let miou = r.miou.map_or("n/a".into(), |m| format!("{:.2}", 100.0 * m));
            let opt = |v: Option<usize>| v.map_or("n/a".into(), |v| v.to_string());
            let lat = r.latency_ms.map_or("n/a".into(), |v| format!("{v:.3}"));
            let _ = writeln!(
                s,
                "{:<width$} | {miou:>7} | {:>12} | {:>16} | {lat:>12}",
                r.name,
                opt(r.train_params),
                opt(r.inference_params)
            );
        }
        s
    }
}

/// Trains and evaluates every leg under `base.runtime.checkpoint_dir/<leg>`.
/// A failing leg is recorded as failed and the remaining legs still run.
pub fn run_ablation(plan: &AblationPlan, base: &ExperimentConfig) -> Result<AblationReport> {
    plan.validate()?;
    let mut rows = Vec::with_capacity(plan.legs.len());
    for leg in &plan.legs {
        log::info!("ablation leg '{}'", leg.name);
        let row = run_leg(leg, base).unwrap_or_else(|e| {
            log::error!("ablation leg '{}' failed: {e}", leg.name);
            AblationRow {
                name: leg.name.clone(),
                miou: None,
                train_params: None,
                inference_params: None,
                latency_ms: None,
                error: Some(e.to_string()),
            }
        });
        rows.push(row);
    }
    Ok(AblationReport { rows })
}

fn run_leg(leg: &AblationDelta, base: &ExperimentConfig) -> Result<AblationRow> {
    let mut cfg = leg.apply(base)?;
    cfg.runtime.checkpoint_dir = base.runtime.checkpoint_dir.join(leg.slug());
    let outcome = train(&cfg, &TrainOptions::default())?;
    let mut model = CENet::new(&cfg.model, cfg.runtime.seed)?;
    let timing = cfg.benchmark.timing(cfg.runtime.seed);
    let (latency, _) = time_forward(&mut model, cfg.projection.height, cfg.projection.width, &timing)?;
    Ok(AblationRow {
        name: leg.name.clone(),
        miou: outcome.best_miou,
        train_params: Some(model.count_parameters(ParamScope::Train)),
        inference_params: Some(model.count_parameters(ParamScope::Inference)),
        latency_ms: Some(latency),
        error: None,
    })
}
