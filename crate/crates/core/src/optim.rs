//! Adam with decoupled weight decay, global-norm clipping and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-9,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment accumulators, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, preceded by decoupled weight decay
/// `p ← p − lr·wd·p`.
///
/// `names` labels parameters in the non-finite-gradient diagnostic.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
    names: &[String],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            let name = names.get(i).map_or("<unnamed>", String::as_str);
            return Err(Error::Numeric(format!("non-finite gradient for parameter {name}")));
        }
        if g.shape() != params[i].shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: params[i].shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            if cfg.weight_decay > 0.0 {
                *pi -= lr * cfg.weight_decay * *pi;
            }
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Global L2 norm over every gradient.
pub fn grad_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`;
/// returns the factor applied (1.0 when already inside).
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    scale
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    InverseSqrtWarmup,
    Tristage,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub start_lr: f64,
    #[serde(default = "default_end_lr")]
    pub end_lr: f64,
    pub total_steps: u64,
    #[serde(default)]
    pub hold_steps: u64,
}

fn default_end_lr() -> f64 {
    1e-5
}

impl Schedule {
    pub fn constant(lr: f64, total_steps: u64) -> Self {
        Schedule {
            kind: ScheduleKind::Constant,
            warmup_steps: 0,
            peak_lr: lr,
            start_lr: lr,
            end_lr: lr,
            total_steps,
            hold_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.kind == ScheduleKind::Tristage && self.warmup_steps + self.hold_steps > self.total_steps {
            return Err(Error::Config("warmup + hold exceeds total_steps".into()));
        }
        if self.kind == ScheduleKind::InverseSqrtWarmup && self.warmup_steps == 0 {
            return Err(Error::Config("inverse_sqrt_warmup needs warmup_steps >= 1".into()));
        }
        for (name, v) in [
            ("peak_lr", self.peak_lr),
            ("start_lr", self.start_lr),
            ("end_lr", self.end_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Learning rate at optimizer step `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        let warm = self.warmup_steps;
        if self.kind != ScheduleKind::Constant && step < warm {
            return self.start_lr + (self.peak_lr - self.start_lr) * step as f64 / warm as f64;
        }
        match self.kind {
            ScheduleKind::Constant => self.peak_lr,
            ScheduleKind::InverseSqrtWarmup => self.peak_lr * (warm as f64 / step.max(1) as f64).sqrt(),
            ScheduleKind::Tristage => {
                let decay_start = warm + self.hold_steps;
                if step <= decay_start {
                    return self.peak_lr;
                }
                let decay_len = self.total_steps.saturating_sub(decay_start).max(1);
                let frac = ((step - decay_start) as f64 / decay_len as f64).min(1.0);
                self.peak_lr * (self.end_lr / self.peak_lr).powf(frac)
            }
        }
    }
}
