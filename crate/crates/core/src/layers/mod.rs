//! Layers with explicit forward and backward passes.
//!
//! Weight-bearing layers ([`Dense`], [`Conv`]) draw `w_b` from their
//! real-valued weights at the start of each training-phase forward pass and
//! cache it, so the matching backward pass propagates through exactly the same
//! binary weights. Their weight gradient is `∂C/∂w_b`, which the optimizer
//! applies to the real-valued weights. Biases and batch-norm parameters are
//! never binarized.

mod activation;
mod batchnorm;
mod conv;
mod dense;

use std::fmt;
use std::str::FromStr;

pub use activation::{MaxPool, Relu};
pub use batchnorm::{apply_affine, BatchNorm, BatchNormGrads, BN_EPSILON, BN_MOMENTUM};
pub use conv::{Conv, ConvGrads};
pub use dense::{Dense, DenseGrads};

use crate::binarize::{BinarizationMode, RngStream};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, KERNEL_AREA};

/// One entry of an architecture description.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv3x3 { filters: usize },
    BatchNorm,
    Relu,
    MaxPool2,
    /// Terminal L2-SVM scoring layer: a dense layer with one unit per class
    /// followed by batch normalization.
    SvmOutput { classes: usize },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { units } => write!(f, "dense:{units}"),
            LayerSpec::Conv3x3 { filters } => write!(f, "conv:{filters}"),
            LayerSpec::BatchNorm => f.write_str("bn"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool2 => f.write_str("pool"),
            LayerSpec::SvmOutput { classes } => write!(f, "svm:{classes}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let size = || -> Result<usize> {
            let a = arg.ok_or_else(|| Error::Config(format!("layer `{s}` needs a size")))?;
            match a.trim().parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(Error::Config(format!("layer `{s}`: bad size `{a}`"))),
            }
        };
        let spec = match kind {
            "dense" | "fc" => LayerSpec::Dense { units: size()? },
            "conv" | "conv3x3" => LayerSpec::Conv3x3 { filters: size()? },
            "svm" => LayerSpec::SvmOutput { classes: size()? },
            "bn" | "batchnorm" if arg.is_none() => LayerSpec::BatchNorm,
            "relu" if arg.is_none() => LayerSpec::Relu,
            "pool" | "maxpool" | "mp2" if arg.is_none() => LayerSpec::MaxPool2,
            _ => return Err(Error::Config(format!("unknown layer `{s}`"))),
        };
        Ok(spec)
    }
}

/// Parses a comma-separated layer list such as `dense:256,bn,relu,svm:10`.
pub fn parse_layers(s: &str) -> Result<Vec<LayerSpec>> {
    let specs = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    match specs.iter().position(|l| matches!(l, LayerSpec::SvmOutput { .. })) {
        Some(i) if i + 1 == specs.len() => Ok(specs),
        _ => Err(Error::Config(format!(
            "layer list `{s}` must end with exactly one svm:<classes> layer"
        ))),
    }
}

pub fn format_layers(specs: &[LayerSpec]) -> String {
    specs.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
}

/// How the optimizer treats a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Binarized during propagation; learning rate scaled per layer and the
    /// value clipped to `[−1, 1]` after every update.
    Weight { fan_in: usize, fan_out: usize },
    /// Bias, batch-norm scale or shift: plain update, no clipping.
    Other,
}

#[derive(Clone, Debug)]
pub enum Layer<T: Real = f32> {
    Dense(Dense<T>),
    Conv(Conv<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu<T>),
    MaxPool(MaxPool<T>),
}

impl<T: Real> Layer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(d) if d.output => "svm-output",
            Layer::Dense(_) => "dense",
            Layer::Conv(_) => "conv3x3",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool2",
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>, mode: BinarizationMode, rng: &mut RngStream) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.forward_train(x, mode, rng),
            Layer::Conv(l) => l.forward_train(x, mode, rng),
            Layer::BatchNorm(l) => l.forward_train(x),
            Layer::Relu(l) => Ok(l.forward_train(x)),
            Layer::MaxPool(l) => l.forward_train(x),
        }
    }

    /// Inference-phase forward: no caches written, batch norm uses running
    /// statistics.
    pub fn forward(&self, x: &Tensor<T>, mode: BinarizationMode, rng: &mut RngStream) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.forward(x, mode, rng),
            Layer::Conv(l) => l.forward(x, mode, rng),
            Layer::BatchNorm(l) => l.forward(x),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::MaxPool(l) => l.forward(x),
        }
    }

    /// Returns the input gradient (when requested) and one gradient per
    /// entry of [`Layer::params`].
    pub fn backward(&self, grad_out: &Tensor<T>, need_input: bool) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>)> {
        Ok(match self {
            Layer::Dense(l) => {
                let g = l.backward(grad_out, need_input)?;
                (g.input, vec![g.weight, g.bias])
            }
            Layer::Conv(l) => {
                let g = l.backward(grad_out, need_input)?;
                (g.input, vec![g.kernels, g.bias])
            }
            Layer::BatchNorm(l) => {
                let g = l.backward(grad_out)?;
                (Some(g.input), vec![g.gamma, g.beta])
            }
            Layer::Relu(l) => (Some(l.backward(grad_out)?), vec![]),
            Layer::MaxPool(l) => (Some(l.backward(grad_out)?), vec![]),
        })
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Conv(l) => vec![&l.kernels, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv(l) => vec![&mut l.kernels, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => vec![],
        }
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        match self {
            Layer::Dense(l) => vec![
                ParamKind::Weight {
                    fan_in: l.d_in(),
                    fan_out: l.d_out(),
                },
                ParamKind::Other,
            ],
            Layer::Conv(l) => vec![
                ParamKind::Weight {
                    fan_in: l.channels() * KERNEL_AREA,
                    fan_out: l.filters() * KERNEL_AREA,
                },
                ParamKind::Other,
            ],
            Layer::BatchNorm(_) => vec![ParamKind::Other, ParamKind::Other],
            _ => vec![],
        }
    }

    /// The real-valued weight matrix or kernel bank, if the layer has one.
    pub fn weight(&self) -> Option<&Tensor<T>> {
        match self {
            Layer::Dense(l) => Some(&l.weight),
            Layer::Conv(l) => Some(&l.kernels),
            _ => None,
        }
    }

    /// The `w_b` cached by the last training-phase forward.
    pub fn cached_binary_weight(&self) -> Option<&Tensor<T>> {
        match self {
            Layer::Dense(l) => l.cached_binary_weight(),
            Layer::Conv(l) => l.cached_binary_weight(),
            _ => None,
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Dense(l) => l.clear_cache(),
            Layer::Conv(l) => l.clear_cache(),
            Layer::BatchNorm(l) => l.clear_cache(),
            Layer::Relu(l) => l.clear_cache(),
            Layer::MaxPool(l) => l.clear_cache(),
        }
    }
}
