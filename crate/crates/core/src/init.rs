//! Glorot-uniform initialization.
//!
//! The same coefficient `c = √(6 / (fan_in + fan_out))` sets the
//! initialization range and, in [`crate::optim::layer_lr_scale`], the
//! per-layer learning-rate scale.

use crate::binarize::RngStream;
use crate::tensor::{Real, Tensor};

/// Glorot coefficient `√(6 / (fan_in + fan_out))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitCoefficient(f64);

impl InitCoefficient {
    pub fn new(fan_in: usize, fan_out: usize) -> Self {
        assert!(fan_in >= 1 && fan_out >= 1, "fans must be positive");
        InitCoefficient((6.0 / (fan_in + fan_out) as f64).sqrt())
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Samples i.i.d. uniform entries on `[−c, c]`.
pub fn glorot_uniform<T: Real>(
    fan_in: usize,
    fan_out: usize,
    shape: &[usize],
    rng: &mut RngStream,
) -> Tensor<T> {
    let c = InitCoefficient::new(fan_in, fan_out).value();
    Tensor::from_fn(shape, |_| T::of(c * (2.0 * rng.uniform() as f64 - 1.0)))
}
