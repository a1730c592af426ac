use serde::{Deserialize, Serialize};

use super::network::ParamTree;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one parameter tree.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
    skipped: u64,
}

impl AdamState {
    pub fn new<P: ParamTree + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
            skipped: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Number of updates rejected because of non-finite gradients.
    pub fn skipped_count(&self) -> u64 {
        self.skipped
    }

    /// Applies one bias-corrected Adam update. Returns `Ok(false)` and leaves
    /// everything untouched if any gradient is non-finite.
    pub fn step<P: ParamTree + ?Sized, G: ParamTree + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
    ) -> Result<bool> {
        let grads = grads.tensors();
        if grads.len() != self.first.len() {
            return Err(Error::shape(
                "adam gradient count",
                &[self.first.len()],
                &[grads.len()],
            ));
        }
        for (g, m) in grads.iter().zip(&self.first) {
            if g.shape() != m.shape() {
                return Err(Error::shape("adam gradient", m.shape(), g.shape()));
            }
        }
        if !grads.iter().all(|g| g.is_finite()) {
            self.skipped += 1;
            log::warn!(
                "adam: non-finite gradient, update {} skipped",
                self.step + 1
            );
            return Ok(false);
        }
        let mut params = params.tensors_mut();
        if params.len() != self.first.len() {
            return Err(Error::shape(
                "adam parameter count",
                &[self.first.len()],
                &[params.len()],
            ));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(true)
    }
}
