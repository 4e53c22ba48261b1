//! SGD and Adam parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::param::Param;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    adam: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self::with_adam_config(kind, AdamConfig::default())
    }

    pub fn with_adam_config(kind: OptimizerKind, adam: AdamConfig) -> Self {
        Self {
            kind,
            adam,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. Gradients are checked for finiteness before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut [Param<T>], grads: &[Vec<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} gradient arrays for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.len() != g.len() {
                return Err(Error::Shape(format!("gradient length mismatch for `{}`", p.name)));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in `{}` at element {i} (step {})",
                    p.name,
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let lr = T::lit(lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &d) in p.value.iter_mut().zip(g) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
                    self.second = self.first.clone();
                }
                let b1 = T::lit(self.adam.beta1);
                let b2 = T::lit(self.adam.beta2);
                let eps = T::lit(self.adam.eps);
                let one = T::one();
                let t = self.step as i32;
                let c1 = one - b1.powi(t);
                let c2 = one - b2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    for (((w, &d), m), v) in p.value.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = (b1 * *m + (one - b1) * d).flush_subnormal();
                        *v = (b2 * *v + (one - b2) * d * d).flush_subnormal();
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
