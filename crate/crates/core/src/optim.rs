//! SGD with momentum and learning-rate schedules.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{Array, Checkpoint, ParamStore};

pub const ONE_CYCLE_DIV: f64 = 25.0;
pub const ONE_CYCLE_FINAL_DIV: f64 = 1e4;

const VELOCITY_PREFIX: &str = "opt/velocity/";

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub velocity: BTreeMap<String, Array>,
    pub steps: u64,
}

impl Sgd {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self {
            momentum,
            velocity: BTreeMap::new(),
            steps: 0,
        })
    }

    /// `v <- mu*v + g; p <- p - lr*v` for every parameter. Gradients are left
    /// untouched; the caller zeroes them.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        if params.iter().any(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::NonFinite { op: "sgd_step" });
        }
        for (name, p) in params.iter_mut() {
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| Array::zeros(p.value.shape()));
            for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(p.grad.data()).zip(p.value.data_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        self.steps += 1;
        Ok(())
    }

    pub fn save_into(&self, ck: &mut Checkpoint) {
        for (k, v) in &self.velocity {
            ck.insert(format!("{VELOCITY_PREFIX}{k}"), v.clone());
        }
        ck.set_meta("opt.momentum", self.momentum.to_string());
        ck.set_meta("opt.steps", self.steps.to_string());
    }

    pub fn load_from(ck: &Checkpoint) -> Result<Self> {
        let meta = |k: &str| {
            ck.meta(k)
                .ok_or_else(|| Error::Checkpoint { name: k.into(), reason: "missing".into() })
        };
        let momentum: f64 = meta("opt.momentum")?
            .parse()
            .map_err(|_| Error::Checkpoint { name: "opt.momentum".into(), reason: "not a number".into() })?;
        let mut s = Sgd::new(momentum)?;
        s.steps = meta("opt.steps")?
            .parse()
            .map_err(|_| Error::Checkpoint { name: "opt.steps".into(), reason: "not an integer".into() })?;
        for (k, v) in &ck.arrays {
            if let Some(name) = k.strip_prefix(VELOCITY_PREFIX) {
                s.velocity.insert(name.to_string(), v.clone());
            }
        }
        Ok(s)
    }
}

pub fn cosine_annealing(lr0: f64, epoch: usize, total_epochs: usize, lr_min: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::InvalidArgument("cosine schedule needs total_epochs > 0".into()));
    }
    if epoch > total_epochs {
        return Err(Error::InvalidArgument(format!("epoch {epoch} beyond {total_epochs}")));
    }
    let c = (PI * epoch as f64 / total_epochs as f64).cos();
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + c))
}

pub fn exponential(lr0: f64, gamma: f64, epoch: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside (0, 1]")));
    }
    Ok(lr0 * gamma.powi(epoch as i32))
}

/// Step at which the one-cycle schedule peaks.
pub fn one_cycle_peak(pct_start: f64, total_steps: usize) -> usize {
    (pct_start * total_steps as f64).round() as usize
}

pub fn one_cycle(max_lr: f64, pct_start: f64, step: usize, total_steps: usize) -> Result<f64> {
    if !(pct_start > 0.0 && pct_start < 1.0) {
        return Err(Error::InvalidArgument(format!("pct_start {pct_start} outside (0, 1)")));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} beyond {total_steps}")));
    }
    let peak = one_cycle_peak(pct_start, total_steps);
    let lo = max_lr / ONE_CYCLE_DIV;
    let end = max_lr / ONE_CYCLE_FINAL_DIV;
    let anneal = |from: f64, to: f64, frac: f64| from + 0.5 * (to - from) * (1.0 - (PI * frac).cos());
    Ok(if step == peak {
        max_lr
    } else if step < peak {
        anneal(lo, max_lr, step as f64 / peak as f64)
    } else {
        anneal(max_lr, end, (step - peak) as f64 / (total_steps - peak) as f64)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheduler {
    Constant,
    Cosine { lr_min: f64 },
    Exponential { gamma: f64 },
    OneCycle { pct_start: f64 },
}

impl Scheduler {
    pub fn name(&self) -> &'static str {
        match self {
            Scheduler::Constant => "constant",
            Scheduler::Cosine { .. } => "cosine",
            Scheduler::Exponential { .. } => "exponential",
            Scheduler::OneCycle { .. } => "one_cycle",
        }
    }

    /// Per-epoch for cosine and exponential, per-step for one-cycle.
    pub fn granularity(&self) -> &'static str {
        match self {
            Scheduler::OneCycle { .. } => "step",
            _ => "epoch",
        }
    }

    /// Learning rate for global `step`, which falls in `epoch`.
    pub fn lr(&self, lr0: f64, epoch: usize, epochs: usize, step: usize, total_steps: usize) -> Result<f64> {
        match *self {
            Scheduler::Constant => Ok(lr0),
            Scheduler::Cosine { lr_min } => cosine_annealing(lr0, epoch, epochs, lr_min),
            Scheduler::Exponential { gamma } => exponential(lr0, gamma, epoch),
            Scheduler::OneCycle { pct_start } => one_cycle(lr0, pct_start, step, total_steps),
        }
    }
}
