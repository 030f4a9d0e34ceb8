use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tensor::Module;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Algorithm {
    pub fn adam() -> Self {
        Algorithm::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// Every gradient component is clipped into `[-clip, clip]` before use.
    pub clip_bound: Option<f64>,
}

impl OptimConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimConfig { algorithm: Algorithm::Sgd, learning_rate, clip_bound: None }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimConfig { algorithm: Algorithm::adam(), learning_rate, clip_bound: None }
    }

    pub fn with_clip(mut self, bound: f64) -> Self {
        self.clip_bound = Some(bound);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if let Some(c) = self.clip_bound {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config("clip bound must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    /// Largest magnitude of any gradient component actually applied.
    pub max_applied_grad: f64,
    /// Components that were clipped.
    pub clipped: usize,
}

/// Stateful optimizer bound to one module's parameter layout.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer { config, step: 0, first: Vec::new(), second: Vec::new() })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) -> Result<StepStats> {
        let mut missing = None;
        let mut idx = 0;
        module.visit(&mut |t| {
            if missing.is_none() && t.grad().is_none() {
                missing = Some(idx);
            }
            idx += 1;
        });
        if let Some(i) = missing {
            return Err(Error::MissingGradient(i));
        }

        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let mut stats = StepStats::default();
        let (first, second) = (&mut self.first, &mut self.second);
        let mut p = 0;
        module.visit_mut(&mut |tensor| {
            let mut grad = tensor.take_grad().unwrap();
            if let Some(c) = cfg.clip_bound {
                for g in grad.iter_mut() {
                    if *g > c || *g < -c {
                        *g = g.clamp(-c, c);
                        stats.clipped += 1;
                    }
                }
            }
            for g in &grad {
                stats.max_applied_grad = stats.max_applied_grad.max(math::abs(*g));
            }
            let lr = cfg.learning_rate;
            match cfg.algorithm {
                Algorithm::Sgd => {
                    for (w, g) in tensor.values_mut().iter_mut().zip(&grad) {
                        *w -= lr * g;
                    }
                }
                Algorithm::Adam { beta1, beta2, eps } => {
                    if first.len() <= p {
                        first.push(alloc::vec![0.0; grad.len()]);
                        second.push(alloc::vec![0.0; grad.len()]);
                    }
                    let (m, v) = (&mut first[p], &mut second[p]);
                    let bc1 = 1.0 - math::powi(beta1, t as i32);
                    let bc2 = 1.0 - math::powi(beta2, t as i32);
                    for (i, w) in tensor.values_mut().iter_mut().enumerate() {
                        let g = grad[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        *w -= lr * m_hat / (math::sqrt(v_hat) + eps);
                    }
                }
            }
            p += 1;
        });
        Ok(stats)
    }
}
