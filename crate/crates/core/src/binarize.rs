//! Weight binarization.
//!
//! Real-valued weights `w` are kept as accumulators; propagations see
//! `w_b ∈ {−1, +1}` obtained either deterministically (`sign`, with
//! `sign(0) = +1`) or stochastically (`+1` with probability
//! `hard_sigmoid(w)`). The stochastic form is unbiased on `[−1, 1]`:
//! `E[w_b] = 2·hard_sigmoid(w) − 1 = clip(w, −1, 1)`.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum BinarizationMode {
    /// Weights propagate unmodified: an ordinary real-valued network.
    #[default]
    Off,
    Deterministic,
    Stochastic,
}

impl fmt::Display for BinarizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinarizationMode::Off => "off",
            BinarizationMode::Deterministic => "det",
            BinarizationMode::Stochastic => "stoch",
        })
    }
}

impl FromStr for BinarizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "off" | "none" => Ok(BinarizationMode::Off),
            "det" | "deterministic" => Ok(BinarizationMode::Deterministic),
            "stoch" | "stochastic" => Ok(BinarizationMode::Stochastic),
            other => Err(Error::Config(format!(
                "unknown binarization mode `{other}` (expected off, det or stoch)"
            ))),
        }
    }
}

/// What a random stream is used for. Streams in different domains never
/// share key space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    Binarize = 1,
    Init = 2,
    Shuffle = 3,
    Ensemble = 4,
    Subsample = 5,
}

const TENSOR_BITS: u32 = 16;
const COUNTER_BITS: u32 = 44;

/// Seedable counter-based stream of uniform `f32` samples in `[0, 1)`.
///
/// A stream is addressed by `(seed, domain, tensor id, counter)`; the
/// position within the stream is the number of samples drawn so far. Any
/// sample can therefore be regenerated without replaying earlier streams,
/// which keeps training reproducible across checkpoint/resume.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn keyed(seed: u64, domain: Domain, tensor_id: u32, counter: u64) -> Self {
        debug_assert!(tensor_id < 1 << TENSOR_BITS);
        debug_assert!(counter < 1 << COUNTER_BITS);
        let stream = ((domain as u64) << (TENSOR_BITS + COUNTER_BITS))
            | ((counter & ((1 << COUNTER_BITS) - 1)) << TENSOR_BITS)
            | (tensor_id as u64 & ((1 << TENSOR_BITS) - 1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { rng }
    }

    /// Uniform sample in `[0, 1)` with 24 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f32 {
        (self.rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Underlying generator, for shuffling and distribution sampling.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// `clip((x + 1) / 2, 0, 1)`.
#[inline]
pub fn hard_sigmoid<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    ((x + T::one()) * half).max(T::zero()).min(T::one())
}

/// Analytic expectation of [`binarize_stoch`] for a single weight.
#[inline]
pub fn expected_binary<T: Real>(w: T) -> T {
    T::of(2.0) * hard_sigmoid(w) - T::one()
}

#[inline]
pub fn sign<T: Real>(w: T) -> T {
    if w >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

pub fn binarize_det<T: Real>(w: &Tensor<T>) -> Tensor<T> {
    w.map(sign)
}

/// Draws one uniform sample per entry, in flat index order.
pub fn binarize_stoch<T: Real>(w: &Tensor<T>, rng: &mut RngStream) -> Tensor<T> {
    let data = w
        .data()
        .iter()
        .map(|&x| {
            let u = T::of(rng.uniform() as f64);
            if u < hard_sigmoid(x) {
                T::one()
            } else {
                -T::one()
            }
        })
        .collect();
    Tensor::new(w.shape(), data).expect("same shape")
}

/// Binarizes `w` according to `mode`. `Off` returns a copy of `w`.
pub fn binarize<T: Real>(w: &Tensor<T>, mode: BinarizationMode, rng: &mut RngStream) -> Tensor<T> {
    match mode {
        BinarizationMode::Off => w.clone(),
        BinarizationMode::Deterministic => binarize_det(w),
        BinarizationMode::Stochastic => binarize_stoch(w, rng),
    }
}

#[inline]
pub fn clip_scalar<T: Real>(w: T) -> T {
    w.max(-T::one()).min(T::one())
}

pub fn clip_unit<T: Real>(w: &Tensor<T>) -> Tensor<T> {
    w.map(clip_scalar)
}

pub fn clip_unit_in_place<T: Real>(w: &mut Tensor<T>) {
    for x in w.data_mut() {
        *x = clip_scalar(*x);
    }
}
