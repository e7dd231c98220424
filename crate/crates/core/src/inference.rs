//! Test-time use of a trained network: binary weights, real weights, or an
//! ensemble of stochastically binarized networks.

use std::fmt;
use std::str::FromStr;

use crate::binarize::{BinarizationMode, Domain};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::predict;
use crate::network::{Network, StreamKey};
use crate::packed::PackedModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceMode {
    /// Deterministic `w_b = sign(w)`, evaluated by the packed kernels.
    BinaryDet,
    /// The real-valued weights.
    RealWeights,
    /// Average of the scores of `members` stochastic binarizations.
    Ensemble { members: usize, seed: u64 },
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InferenceMode::BinaryDet => f.write_str("det"),
            InferenceMode::RealWeights => f.write_str("real"),
            InferenceMode::Ensemble { members, .. } => write!(f, "ensemble:{members}"),
        }
    }
}

/// `det`, `real` or `ensemble:M` (seed 0).
impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" => Ok(InferenceMode::BinaryDet),
            "real" => Ok(InferenceMode::RealWeights),
            _ => {
                let m = s
                    .strip_prefix("ensemble:")
                    .and_then(|m| m.parse::<usize>().ok())
                    .ok_or_else(|| Error::Argument(format!("unknown inference mode `{s}` (det, real, ensemble:M)")))?;
                if m < 1 {
                    return Err(Error::Argument("ensemble needs at least one member".into()));
                }
                Ok(InferenceMode::Ensemble { members: m, seed: 0 })
            }
        }
    }
}

impl InferenceMode {
    /// The mode that matches a training binarization: deterministic
    /// training keeps its binary weights, stochastic training is evaluated
    /// with the real-valued weights.
    pub fn for_training(mode: BinarizationMode) -> Self {
        match mode {
            BinarizationMode::Deterministic => InferenceMode::BinaryDet,
            BinarizationMode::Stochastic | BinarizationMode::Off => InferenceMode::RealWeights,
        }
    }
}

/// Anything that maps a batch of inputs to class scores.
pub trait Classifier {
    fn scores(&self, x: &Tensor<f32>, mode: InferenceMode) -> Result<Tensor<f32>>;
}

impl Classifier for Network<f32> {
    fn scores(&self, x: &Tensor<f32>, mode: InferenceMode) -> Result<Tensor<f32>> {
        match mode {
            InferenceMode::BinaryDet => PackedModel::from_network(self)?.forward(x),
            InferenceMode::RealWeights => self.forward(x, BinarizationMode::Off, StreamKey::training(0, 0)),
            InferenceMode::Ensemble { members, seed } => {
                if members < 1 {
                    return Err(Error::Argument("ensemble needs at least one member".into()));
                }
                let member = |m: usize| {
                    let key = StreamKey {
                        seed,
                        domain: Domain::Ensemble,
                        counter: m as u64,
                    };
                    self.forward(x, BinarizationMode::Stochastic, key)
                };
                let mut sum = member(0)?;
                for m in 1..members {
                    let s = member(m)?;
                    sum.data_mut().iter_mut().zip(s.data()).for_each(|(a, &b)| *a += b);
                }
                let inv = members as f32;
                Ok(sum.map(|v| v / inv))
            }
        }
    }
}

impl Classifier for PackedModel {
    fn scores(&self, x: &Tensor<f32>, mode: InferenceMode) -> Result<Tensor<f32>> {
        match mode {
            InferenceMode::BinaryDet => self.forward(x),
            other => Err(Error::Argument(format!(
                "a packed model only holds sign(w); inference mode `{other}` needs the real weights"
            ))),
        }
    }
}

/// Class scores for `x` under `mode`.
pub fn infer(model: &impl Classifier, x: &Tensor<f32>, mode: InferenceMode) -> Result<Tensor<f32>> {
    model.scores(x, mode)
}

const EVAL_CHUNK: usize = 1000;

/// Fraction of misclassified samples. Inputs are fed in chunks; each
/// chunk sees the same binarizations, so the result does not depend on the
/// chunk size.
pub fn error_rate(model: &impl Classifier, data: &Dataset, mode: InferenceMode) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut wrong = 0usize;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_CHUNK).min(data.len());
        let idx: Vec<usize> = (start..end).collect();
        let (x, labels) = data.gather(&idx);
        let pred = predict(&model.scores(&x, mode)?);
        wrong += pred.iter().zip(&labels).filter(|(&p, &l)| p != l as usize).count();
        start = end;
    }
    Ok(wrong as f64 / data.len() as f64)
}
