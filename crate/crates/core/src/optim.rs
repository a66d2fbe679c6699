//! First-order optimizers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain stochastic gradient descent, no momentum.
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    #[serde(default)]
    pub clip_norm: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            clip_norm: 0.0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            clip_norm: 0.0,
        }
    }

    pub fn build<S: Scalar>(&self) -> Optimizer<S> {
        Optimizer {
            config: *self,
            step: 0,
            moments: HashMap::new(),
        }
    }
}

pub struct Optimizer<S> {
    config: OptimizerConfig,
    step: u64,
    moments: HashMap<ParamId, (Matrix<S>, Matrix<S>)>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<S: Scalar> Optimizer<S> {
    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) {
        self.step += 1;
        let lr = S::of(self.config.lr);
        let clip = if self.config.clip_norm > 0.0 {
            let norm = grads.norm().f64();
            if norm > self.config.clip_norm {
                S::of(self.config.clip_norm / norm)
            } else {
                S::one()
            }
        } else {
            S::one()
        };
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (id, g) in grads.iter() {
                    let p = store.get_mut(id);
                    for (w, &gi) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *w -= lr * clip * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (S::of(BETA1), S::of(BETA2));
                let t = self.step as i32;
                let c1 = S::one() - b1.powi(t);
                let c2 = S::one() - b2.powi(t);
                for (id, g) in grads.iter() {
                    let p = store.get_mut(id);
                    let (m, v) = self
                        .moments
                        .entry(id)
                        .or_insert_with(|| (Matrix::zeros(g.rows(), g.cols()), Matrix::zeros(g.rows(), g.cols())));
                    let iter = p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()));
                    for ((w, &gi), (mi, vi)) in iter {
                        let gi = gi * clip;
                        *mi = b1 * *mi + (S::one() - b1) * gi;
                        *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + S::of(ADAM_EPS));
                    }
                }
            }
        }
    }
}
