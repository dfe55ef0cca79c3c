use serde::{Deserialize, Serialize};

use super::params::{sgd_step, ParameterVector};
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain SGD, no momentum or weight decay.
    #[default]
    Sgd,
    /// Adam with β = (0.9, 0.999), ε = 1e-8 and bias correction.
    Adam,
}

/// Update rule plus its state; a fresh optimizer starts with zero moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &ParameterVector, g: &ParameterVector) -> Result<ParameterVector> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, g, self.lr),
            OptimizerKind::Adam => {
                if !params.same_layout(g) {
                    return Err(Error::LayoutMismatch);
                }
                if self.m.is_empty() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                }
                self.t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                let mut out = params.clone();
                for (((w, &d), m), v) in out.values_mut().iter_mut().zip(g.values()).zip(&mut self.m).zip(&mut self.v) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * d;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * d * d;
                    *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
                if !out.is_finite() {
                    return Err(Error::NonFinite("parameters after Adam step".into()));
                }
                Ok(out)
            }
        }
    }
}
