//! SGD with momentum and the learning-rate schedules used for training.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Module, Param};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// One cosine decay from `lr_max` to `lr_min` over the whole run.
    Cosine,
    /// `cycles` equal cosine decays from `lr_max` to `lr_min`, restarting
    /// at `lr_max` at the start of each cycle.
    Cyclic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Only `sgd` is supported.
    pub kind: String,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    /// Learning rate at the first step (and at each cycle restart).
    pub lr_max: f64,
    /// Learning rate reached at the last step of a decay.
    pub lr_min: f64,
    pub epochs: usize,
    /// Number of restarts for the cyclic schedule; ignored by cosine.
    pub cycles: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: "sgd".into(),
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: ScheduleKind::Cosine,
            lr_max: 1e-2,
            lr_min: 0.0,
            epochs: 100,
            cycles: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind != "sgd" {
            return Err(Error::Config(format!("optimizer.kind '{}' unsupported (only sgd)", self.kind)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("optimizer.momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("optimizer.weight_decay must be non-negative".into()));
        }
        if !(self.lr_min >= 0.0 && self.lr_max >= self.lr_min && self.lr_max > 0.0) {
            return Err(Error::Config("optimizer needs 0 <= lr_min <= lr_max and lr_max > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("optimizer.epochs must be positive".into()));
        }
        if self.schedule == ScheduleKind::Cyclic && (self.cycles == 0 || self.epochs % self.cycles != 0) {
            return Err(Error::Config(format!(
                "optimizer.cycles ({}) must be positive and divide epochs ({})",
                self.cycles, self.epochs
            )));
        }
        Ok(())
    }
}

/// Closed-form per-step learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    kind: ScheduleKind,
    lr_max: f64,
    lr_min: f64,
    total_steps: usize,
    cycle_steps: usize,
}

fn cosine(lr_max: f64, lr_min: f64, t: usize, span: usize) -> f64 {
    if span <= 1 {
        return lr_max;
    }
    let frac = t as f64 / (span - 1) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * frac).cos())
}

impl LrSchedule {
    pub fn new(cfg: &OptimizerConfig, steps_per_epoch: usize) -> Self {
        let total_steps = cfg.epochs * steps_per_epoch.max(1);
        let cycle_steps = match cfg.schedule {
            ScheduleKind::Cosine => total_steps,
            ScheduleKind::Cyclic => total_steps / cfg.cycles.max(1),
        };
        Self {
            kind: cfg.schedule,
            lr_max: cfg.lr_max,
            lr_min: cfg.lr_min,
            total_steps,
            cycle_steps: cycle_steps.max(1),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Learning rate for 0-based `step`; the last step of each decay lands
    /// exactly on `lr_min`.
    pub fn lr(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps.saturating_sub(1));
        match self.kind {
            ScheduleKind::Cosine => cosine(self.lr_max, self.lr_min, step, self.total_steps),
            ScheduleKind::Cyclic => cosine(self.lr_max, self.lr_min, step % self.cycle_steps, self.cycle_steps),
        }
    }
}

/// Momentum SGD with coupled L2 weight decay: `v = m v + (g + wd w)`,
/// `w -= lr v`. Velocities follow the module's parameter visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Self {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, module: &mut dyn Module, lr: f64) {
        let (m, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        let mut idx = 0;
        let velocity = &mut self.velocity;
        module.visit_mut(&mut |p: &mut Param| {
            if !p.trainable {
                return;
            }
            if velocity.len() == idx {
                velocity.push(vec![0.0; p.value.len()]);
            }
            let v = &mut velocity[idx];
            for ((w, &g), vi) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *vi = m * *vi + g + wd * *w;
                *w -= lr * *vi;
            }
            idx += 1;
        });
    }

    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }

    /// Restores velocities saved from a run of the same module layout.
    pub fn set_velocity(&mut self, velocity: Vec<Vec<f32>>) {
        self.velocity = velocity;
    }
}
