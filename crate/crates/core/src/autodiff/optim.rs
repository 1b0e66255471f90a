use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::ParamStore;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGrad(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::adam(),
            lr: 1e-3,
            lr_decay: 1.0,
        }
    }
}

/// Moment accumulators and step counter for one parameter store.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.len()]).collect::<Vec<_>>();
        let adam = matches!(config.kind, OptimizerKind::Adam { .. });
        Optimizer {
            config,
            step: 0,
            first: if adam { zeros() } else { Vec::new() },
            second: if adam { zeros() } else { Vec::new() },
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with the grads currently stored in `store`,
    /// scaling the configured rate by `lr_scale`.
    pub fn step(&mut self, store: &mut ParamStore, lr_scale: f64) -> Result<(), OptimError> {
        if let Some(bad) = store.iter().find(|p| p.trainable && !p.grad.is_finite()) {
            return Err(OptimError::NonFiniteGrad(bad.name.clone()));
        }
        self.step += 1;
        let lr = self.config.lr * lr_scale;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for p in store.iter_mut().filter(|p| p.trainable) {
                    let g = p.grad.data().to_vec();
                    for (v, g) in p.value.data_mut().iter_mut().zip(g) {
                        *v -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (i, p) in store.iter_mut().enumerate() {
                    if !p.trainable {
                        continue;
                    }
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    let g = p.grad.data().to_vec();
                    for (k, val) in p.value.data_mut().iter_mut().enumerate() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        let mhat = m[k] / c1;
                        let vhat = v[k] / c2;
                        *val -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
