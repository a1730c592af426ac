use serde::{Deserialize, Serialize};

/// Element-wise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Tanh,
    Softplus,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at `x`, given the already computed output `y = apply(x)`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
            Activation::Identity => 1.0,
        }
    }
}

/// `log(1 + e^x)` without overflow for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One layer of a feed-forward stack. Shapes exclude the batch dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// `y = W x + b`, the input is flattened per sample.
    Dense {
        input: usize,
        output: usize,
    },
    /// Valid (unpadded) 2D convolution over `[channels, height, width]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Normalisation over each flattened sample followed by a learned
    /// per-element gain and shift.
    LayerNorm {
        size: usize,
    },
    Activation(Activation),
}

impl LayerSpec {
    pub fn dense(input: usize, output: usize) -> Self {
        LayerSpec::Dense { input, output }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn layer_norm(size: usize) -> Self {
        LayerSpec::LayerNorm { size }
    }

    pub fn activation(a: Activation) -> Self {
        LayerSpec::Activation(a)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::LayerNorm { .. } => "layer_norm",
            LayerSpec::Activation(_) => "activation",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activations_at_zero() {
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Elu.apply(0.0), 0.0);
        assert!((Activation::Softplus.apply(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(Activation::Tanh.derivative(0.0, 0.0), 1.0);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!(softplus(-1000.0) < 1e-300);
    }

    #[test]
    fn activations_are_monotone() {
        for act in [
            Activation::Elu,
            Activation::Tanh,
            Activation::Softplus,
            Activation::Identity,
        ] {
            let mut prev = f64::NEG_INFINITY;
            for i in -4000..=4000 {
                let y = act.apply(i as f64 * 0.005);
                assert!(y >= prev, "{act:?} decreased at {}", i as f64 * 0.005);
                prev = y;
            }
        }
    }
}
