//! Adam optimizer with two learning-rate groups.
//!
//! The meta-learner trunk (`meta.*` tensors) trains an order of magnitude
//! slower than everything else, which keeps the task conditioning from
//! destabilising the image branches early in training. Group membership is
//! decided by tensor name, the same key used for initialization and
//! checkpointing.

use std::collections::BTreeMap;

use crate::error::{MalsiamError, Result};
use crate::tensor::Tensor;

use super::ModelParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    /// Rate for convolutional layers, shared FC layers, the classifier
    /// head, the shift, and the weight generators.
    pub lr_main: f64,
    /// Rate for the meta-learner trunk.
    pub lr_meta: f64,
    /// Completed steps (for bias correction).
    pub t: u64,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr_main: f64, lr_meta: f64) -> Self {
        Adam {
            lr_main,
            lr_meta,
            t: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    fn lr_for(&self, name: &str) -> f64 {
        if name.starts_with("meta.") {
            self.lr_meta
        } else {
            self.lr_main
        }
    }

    /// One update over every parameter that received a gradient. Moment
    /// buffers are created lazily (zero-initialized) per tensor name.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        self.t += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (name, grad) in grads {
            let param = params.tensors.get_mut(name).ok_or_else(|| {
                MalsiamError::Config(format!("gradient for unknown tensor '{name}'"))
            })?;
            if grad.shape != param.shape {
                return Err(MalsiamError::Config(format!(
                    "gradient shape {:?} does not match '{name}' {:?}",
                    grad.shape, param.shape
                )));
            }
            if grad.data.iter().any(|v| !v.is_finite()) {
                return Err(MalsiamError::Numeric(format!(
                    "non-finite gradient in '{name}'"
                )));
            }
            let lr = self.lr_for(name);
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&param.shape));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(&param.shape));
            for i in 0..param.data.len() {
                let g = grad.data[i];
                m.data[i] = ADAM_BETA1 * m.data[i] + (1.0 - ADAM_BETA1) * g;
                v.data[i] = ADAM_BETA2 * v.data[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m.data[i] / bias1;
                let v_hat = v.data[i] / bias2;
                param.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
        Ok(())
    }
}
