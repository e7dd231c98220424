//! Parameter updates: SGD, Nesterov momentum and ADAM, exponential
//! learning-rate decay, per-layer learning-rate scaling by the Glorot
//! coefficient, and clipping of binarizable weights to `[−1, 1]` after every
//! update.

use std::fmt;
use std::str::FromStr;

use crate::binarize::clip_scalar;
use crate::error::{Error, Result};
use crate::init::InitCoefficient;
use crate::layers::ParamKind;
use crate::network::Network;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Sgd,
    Nesterov,
    Adam,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sgd, Method::Nesterov, Method::Adam];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sgd => "sgd",
            Method::Nesterov => "nesterov",
            Method::Adam => "adam",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Method::Sgd),
            "nesterov" => Ok(Method::Nesterov),
            "adam" => Ok(Method::Adam),
            other => Err(Error::Config(format!(
                "unknown optimizer `{other}` (expected sgd, nesterov or adam)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

/// `η(e) = η₀·(η_T/η₀)^(e/(T−1))`, constant `η₀` when `T = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub epochs: usize,
}

impl LrSchedule {
    pub fn new(start: f64, end: f64, epochs: usize) -> Result<Self> {
        if !(start >= end && end > 0.0) || epochs == 0 {
            return Err(Error::Config(format!(
                "learning-rate schedule needs lr_start >= lr_end > 0 and epochs >= 1 (got {start}, {end}, {epochs})"
            )));
        }
        Ok(LrSchedule { start, end, epochs })
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::Argument(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.epochs
            )));
        }
        if self.epochs == 1 {
            return Ok(self.start);
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        Ok(self.start * (self.end / self.start).powf(frac))
    }
}

/// Glorot coefficient `c` for ADAM, `c²` for SGD and Nesterov.
pub fn layer_lr_scale(fan_in: usize, fan_out: usize, method: Method) -> f64 {
    let c = InitCoefficient::new(fan_in, fan_out).value();
    match method {
        Method::Adam => c,
        Method::Sgd | Method::Nesterov => c * c,
    }
}

#[inline]
fn finish<T: Real>(w: T, clip: bool) -> T {
    if clip {
        clip_scalar(w)
    } else {
        w
    }
}

/// `w ← clip(w − lr·g)`, where `lr` already includes any per-layer scale.
pub fn sgd_step<T: Real>(w: &mut [T], grad: &[T], lr: T, clip: bool) {
    for (wi, &g) in w.iter_mut().zip(grad) {
        *wi = finish(*wi - lr * g, clip);
    }
}

/// `v ← μv − lr·g`, `w ← clip(w + μv − lr·g)`.
pub fn nesterov_step<T: Real>(w: &mut [T], grad: &[T], velocity: &mut [T], momentum: T, lr: T, clip: bool) {
    for ((wi, &g), v) in w.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let step = lr * g;
        *v = momentum * *v - step;
        *wi = finish(*wi + momentum * *v - step, clip);
    }
}

/// One bias-corrected ADAM update at step `t ≥ 1`.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    w: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    hp: &Hyperparams,
    lr: T,
    clip: bool,
) {
    let (b1, b2, eps) = (T::of(hp.beta1), T::of(hp.beta2), T::of(hp.adam_epsilon));
    let c1 = T::one() - T::of(hp.beta1.powi(t as i32));
    let c2 = T::one() - T::of(hp.beta2.powi(t as i32));
    for (((wi, &g), mi), vi) in w.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (T::one() - b1) * g;
        *vi = b2 * *vi + (T::one() - b2) * g * g;
        let mhat = *mi / c1;
        let vhat = *vi / c2;
        *wi = finish(*wi - lr * mhat / (vhat.sqrt() + eps), clip);
    }
}

/// Auxiliary buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamState<T: Real = f32> {
    Plain,
    Velocity(Tensor<T>),
    Moments { m: Tensor<T>, v: Tensor<T> },
}

/// Optimizer configuration plus per-parameter state for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T: Real = f32> {
    pub method: Method,
    pub hyper: Hyperparams,
    pub lr_scaling: bool,
    /// Completed update steps; ADAM's bias-correction counter.
    pub step: u64,
    pub state: Vec<Vec<ParamState<T>>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(method: Method, hyper: Hyperparams, lr_scaling: bool, net: &Network<T>) -> Self {
        let state = net
            .layers()
            .iter()
            .map(|l| {
                l.params()
                    .iter()
                    .map(|p| match method {
                        Method::Sgd => ParamState::Plain,
                        Method::Nesterov => ParamState::Velocity(Tensor::zeros(p.shape())),
                        Method::Adam => ParamState::Moments {
                            m: Tensor::zeros(p.shape()),
                            v: Tensor::zeros(p.shape()),
                        },
                    })
                    .collect()
            })
            .collect();
        Optimizer {
            method,
            hyper,
            lr_scaling,
            step: 0,
            state,
        }
    }

    /// Learning rate for a parameter of `kind` at base rate `lr`.
    pub fn effective_lr(&self, kind: ParamKind, lr: f64) -> f64 {
        match kind {
            ParamKind::Weight { fan_in, fan_out } if self.lr_scaling => {
                lr * layer_lr_scale(fan_in, fan_out, self.method)
            }
            _ => lr,
        }
    }

    /// Applies one update to every parameter of `net` and clips the
    /// binarizable weights.
    pub fn update(&mut self, net: &mut Network<T>, grads: &[Vec<Tensor<T>>], lr: f64) -> Result<()> {
        self.step += 1;
        let kinds = net.param_kinds();
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            for (pi, param) in layer.params_mut().into_iter().enumerate() {
                let kind = kinds[li][pi];
                let grad = grads
                    .get(li)
                    .and_then(|g| g.get(pi))
                    .ok_or_else(|| Error::Argument(format!("missing gradient for layer {li} parameter {pi}")))?;
                if grad.shape() != param.shape() {
                    return Err(Error::dim("optimizer update", param.shape(), grad.shape()));
                }
                let clip = matches!(kind, ParamKind::Weight { .. });
                let rate = T::of(self.effective_lr(kind, lr));
                match &mut self.state[li][pi] {
                    ParamState::Plain => sgd_step(param.data_mut(), grad.data(), rate, clip),
                    ParamState::Velocity(v) => nesterov_step(
                        param.data_mut(),
                        grad.data(),
                        v.data_mut(),
                        T::of(self.hyper.momentum),
                        rate,
                        clip,
                    ),
                    ParamState::Moments { m, v } => adam_step(
                        param.data_mut(),
                        grad.data(),
                        m.data_mut(),
                        v.data_mut(),
                        self.step,
                        &self.hyper,
                        rate,
                        clip,
                    ),
                }
            }
        }
        Ok(())
    }
}
