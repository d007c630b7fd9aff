//! First-order optimizers with inverse-time learning-rate decay.

use crate::error::{NnError, Result};
use crate::layers::Param;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Some(OptimizerKind::Adam),
            "rmsprop" => Some(OptimizerKind::RmsProp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// `lr_t = lr / (1 + decay t)` with `t` the number of updates so far.
    pub decay: f64,
    /// Rescale the joint gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl OptimConfig {
    pub fn adam(lr: f64) -> Self {
        Self { kind: OptimizerKind::Adam, lr, decay: 0.0, clip_norm: None }
    }

    pub fn rmsprop(lr: f64) -> Self {
        Self { kind: OptimizerKind::RmsProp, lr, decay: 0.0, clip_norm: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.decay < 0.0 || self.clip_norm.is_some_and(|c| c <= 0.0) {
            return Err(NnError::Config(format!("bad optimizer settings {self:?}")));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const RMS_RHO: f64 = 0.9;
pub const EPSILON: f64 = 1e-8;

/// Per-parameter moment buffers, kept in f64.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimConfig,
    pub steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, steps: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr / (1.0 + self.config.decay * self.steps as f64)
    }

    /// Applies one update from the accumulated gradients. The parameter
    /// list must be the same, in the same order, on every call.
    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len()) {
            return Err(NnError::Training("optimizer used with a different parameter set".into()));
        }
        let mut scale = 1.0;
        if let Some(c) = self.config.clip_norm {
            let norm = params.iter().flat_map(|p| p.grad.data.iter()).map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
            if norm > c {
                scale = c / norm;
            }
        }
        let lr = self.current_lr();
        self.steps += 1;
        let t = self.steps as i32;
        match self.config.kind {
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    for (((w, g), m), v) in p.value.data.iter_mut().zip(&p.grad.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = g.as_f64() * scale;
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let upd = lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
                        *w = T::of(w.as_f64() - upd);
                    }
                }
            }
            OptimizerKind::RmsProp => {
                for (p, v) in params.iter_mut().zip(&mut self.v) {
                    for ((w, g), v) in p.value.data.iter_mut().zip(&p.grad.data).zip(v.iter_mut()) {
                        let g = g.as_f64() * scale;
                        *v = RMS_RHO * *v + (1.0 - RMS_RHO) * g * g;
                        *w = T::of(w.as_f64() - lr * g / (v.sqrt() + EPSILON));
                    }
                }
            }
        }
        Ok(())
    }
}
