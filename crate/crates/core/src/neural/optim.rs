//! First-order optimizers with per-group learning rates.
//!
//! Every learnable tensor is exposed as a [`ParamSlot`] tagged with the group
//! it belongs to. A group's effective rate is `base_lr * correction(group)`;
//! the deep model's group always uses the base rate.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Outlier,
    Shift,
    Scale,
    Power,
    /// DAIN's gating sublayer.
    Gate,
    Model,
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "outlier" => ParamGroup::Outlier,
            "shift" => ParamGroup::Shift,
            "scale" => ParamGroup::Scale,
            "power" => ParamGroup::Power,
            "gate" => ParamGroup::Gate,
            "model" => ParamGroup::Model,
            other => return Err(Error::InvalidArgument(format!("unknown parameter group {other:?}"))),
        })
    }
}

/// Learning-rate multipliers for the preprocessing sublayers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrCorrections {
    pub outlier: f64,
    pub shift: f64,
    pub scale: f64,
    pub power: f64,
    #[serde(default = "one")]
    pub gate: f64,
}

fn one() -> f64 {
    1.0
}

impl LrCorrections {
    pub fn uniform(v: f64) -> Self {
        Self {
            outlier: v,
            shift: v,
            scale: v,
            power: v,
            gate: v,
        }
    }

    pub fn factor(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Outlier => self.outlier,
            ParamGroup::Shift => self.shift,
            ParamGroup::Scale => self.scale,
            ParamGroup::Power => self.power,
            ParamGroup::Gate => self.gate,
            ParamGroup::Model => 1.0,
        }
    }
}

impl Default for LrCorrections {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

pub struct ParamSlot<'a> {
    pub group: ParamGroup,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    #[serde(rename = "rmsprop")]
    RmsProp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub rms_alpha: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            rms_alpha: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every slot. Slots must be passed in the same
    /// order on every call; moment buffers are matched by position.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>], base_lr: f64, corrections: &LrCorrections) -> Result<()> {
        if self.first.is_empty() {
            self.first = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != slots.len()
            || self.first.iter().zip(slots.iter()).any(|(m, s)| m.len() != s.value.len())
        {
            return Err(Error::Shape("parameter slots changed between optimizer steps".into()));
        }
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (idx, slot) in slots.iter_mut().enumerate() {
            if slot.grad.len() != slot.value.len() {
                return Err(Error::Shape("gradient and parameter lengths differ".into()));
            }
            let lr = base_lr * corrections.factor(slot.group);
            if lr == 0.0 {
                continue;
            }
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            match c.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in slot.value.iter_mut().zip(slot.grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    for j in 0..slot.value.len() {
                        let g = slot.grad[j];
                        m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                        v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                        let mh = m[j] / bias1;
                        let vh = v[j] / bias2;
                        slot.value[j] -= lr * mh / (vh.sqrt() + c.eps);
                    }
                }
                OptimizerKind::RmsProp => {
                    for j in 0..slot.value.len() {
                        let g = slot.grad[j];
                        v[j] = c.rms_alpha * v[j] + (1.0 - c.rms_alpha) * g * g;
                        slot.value[j] -= lr * g / (v[j].sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Multi-step decay: the rate is multiplied by `gamma` once for every
/// milestone `<= epoch` (epochs counted from 0).
pub fn scheduled_lr(base: f64, epoch: usize, milestones: &[usize], gamma: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    base * gamma.powi(passed as i32)
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= f;
            }
        }
    }
    norm
}
