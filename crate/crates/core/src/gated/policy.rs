//! Diagonal Gaussian policy head.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::nn::layer::{sigmoid, softplus};

/// Variance bounds applied to the softplus output of the Cholesky head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for VarianceBounds {
    fn default() -> Self {
        Self {
            min: 1e-2,
            max: 1.0,
        }
    }
}

impl VarianceBounds {
    /// Maps a raw head output to a standard deviation. The softplus output is
    /// squashed affinely into `[min, max]` (via tanh) so the bound never kills
    /// the gradient outright.
    pub fn std(&self, raw: f64) -> f64 {
        let t = softplus(raw).tanh();
        (self.min + (self.max - self.min) * t).sqrt()
    }

    /// `d std / d raw`, given `std = self.std(raw)`.
    pub fn std_derivative(&self, raw: f64, std: f64) -> f64 {
        let t = softplus(raw).tanh();
        (self.max - self.min) * (1.0 - t * t) * sigmoid(raw) / (2.0 * std)
    }
}

/// Mean and standard deviation of one diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianPolicyParams {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.std
            .iter()
            .map(|s| 0.5 * (2.0 * PI * std::f64::consts::E).ln() + s.ln())
            .sum()
    }
}

/// Reparameterised sample `mean + std * noise`. No clipping: the action box is
/// enforced by the environment.
pub fn sample_action(p: &GaussianPolicyParams, noise: &[f64]) -> Vec<f64> {
    debug_assert_eq!(noise.len(), p.dim());
    p.mean
        .iter()
        .zip(&p.std)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect()
}

/// Exact log-density of a diagonal Gaussian.
pub fn log_prob(p: &GaussianPolicyParams, action: &[f64]) -> f64 {
    log_prob_parts(&p.mean, &p.std, action)
}

pub(crate) fn log_prob_parts(mean: &[f64], std: &[f64], action: &[f64]) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    mean.iter()
        .zip(std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s;
            -0.5 * z * z - s.ln() - half_log_2pi
        })
        .sum()
}
