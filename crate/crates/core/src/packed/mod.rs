//! One bit per weight and a forward pass whose weight loops only add and
//! subtract.
//!
//! A [`PackedModel`] is exported from a trained [`Network`] by deterministic
//! binarization. Batch norm is folded into the per-feature affine used by
//! [`BatchNorm::forward`](crate::layers::BatchNorm::forward), and the
//! kernels accumulate in the same order as the unpacked layers, so the
//! packed forward equals the unpacked deterministic forward bit for bit.

mod bits;
mod format;
pub mod kernels;
mod size;

pub use bits::{pack_weights, Bitmap};
pub use format::{PACKED_MAGIC, PACKED_VERSION};
pub use kernels::{Counted, OpTally};
pub use size::{model_size_report, LayerSize, SizeReport};

use crate::binarize::{binarize_det, BinarizationMode};
use crate::error::{Error, Result};
use crate::layers::{apply_affine, Layer, MaxPool, Relu};
use crate::network::Network;
use crate::tensor::{matmul, Tensor, KERNEL_AREA};

#[derive(Clone, Debug, PartialEq)]
pub enum PackedLayer {
    /// Binary dense layer: one bitmap row of `d_in` signs per output unit.
    Dense { bits: Bitmap, bias: Vec<f32> },
    /// Binary 3×3 convolution: one bitmap row of `C·9` signs per filter.
    Conv { bits: Bitmap, bias: Vec<f32> },
    /// Dense layer kept in full precision (an output layer trained without
    /// binarization). `weight` is `d_in × d_out`.
    RealDense { weight: Tensor<f32>, bias: Vec<f32> },
    /// Folded batch norm.
    Affine { scale: Vec<f32>, shift: Vec<f32> },
    Relu,
    MaxPool2,
}

impl PackedLayer {
    pub fn name(&self) -> &'static str {
        match self {
            PackedLayer::Dense { .. } => "packed-dense",
            PackedLayer::Conv { .. } => "packed-conv3x3",
            PackedLayer::RealDense { .. } => "real-dense",
            PackedLayer::Affine { .. } => "affine",
            PackedLayer::Relu => "relu",
            PackedLayer::MaxPool2 => "maxpool2",
        }
    }

    /// Packs the `±1` matrix `w_b` (`d_in × d_out`) of a dense layer.
    pub fn dense(w_b: &Tensor<f32>, bias: Vec<f32>) -> Result<Self> {
        let bits = pack_weights(&w_b.transpose()?)?;
        if bias.len() != bits.rows() {
            return Err(Error::dim("packed dense bias", &[bias.len()], &[bits.rows()]));
        }
        Ok(PackedLayer::Dense { bits, bias })
    }

    /// Packs the `±1` kernel bank `w_b` (`F × C × 3 × 3`).
    pub fn conv(w_b: &Tensor<f32>, bias: Vec<f32>) -> Result<Self> {
        let [f, _, kh, kw] = w_b.dims4("packed conv")?;
        if kh * kw != KERNEL_AREA || bias.len() != f {
            return Err(Error::dim("packed conv", w_b.shape(), &[bias.len()]));
        }
        Ok(PackedLayer::Conv {
            bits: pack_weights(w_b)?,
            bias,
        })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            PackedLayer::Dense { bits, bias } => {
                let (n, d) = x.as_matrix_dims();
                if d != bits.cols() || x.shape().len() < 2 {
                    return Err(Error::dim("packed_dense_forward", x.shape(), &[bits.cols(), bits.rows()]));
                }
                Tensor::new(&[n, bits.rows()], kernels::dense(x.data(), n, bits, bias))
            }
            PackedLayer::Conv { bits, bias } => {
                let shape = x.dims4("packed_conv_forward")?;
                if shape[1] * KERNEL_AREA != bits.cols() {
                    return Err(Error::dim("packed_conv_forward", x.shape(), &[bits.rows(), bits.cols() / KERNEL_AREA, 3, 3]));
                }
                let [n, _, h, w] = shape;
                Tensor::new(&[n, bits.rows(), h, w], kernels::conv(x.data(), shape, bits, bias))
            }
            PackedLayer::RealDense { weight, bias } => {
                let (n, d) = x.as_matrix_dims();
                if x.shape().len() < 2 {
                    return Err(Error::dim("real_dense_forward", x.shape(), weight.shape()));
                }
                let mut y = matmul(&x.clone().reshape(&[n, d])?, weight)?;
                for row in y.data_mut().chunks_mut(bias.len()) {
                    for (v, &b) in row.iter_mut().zip(bias) {
                        *v += b;
                    }
                }
                Ok(y)
            }
            PackedLayer::Affine { scale, shift } => apply_affine(x, scale, shift),
            PackedLayer::Relu => Ok(Relu::new().forward(x)),
            PackedLayer::MaxPool2 => MaxPool::new().forward(x),
        }
    }

    /// Like `forward` for the binary layers, but on counting scalars.
    fn tally(&self, x: &Tensor<f32>) -> Option<OpTally> {
        let counted: Vec<Counted> = x.data().iter().map(|&v| Counted::new(v)).collect();
        let out = match self {
            PackedLayer::Dense { bits, bias } => {
                let (n, _) = x.as_matrix_dims();
                let b: Vec<Counted> = bias.iter().map(|&v| Counted::new(v)).collect();
                kernels::dense(&counted, n, bits, &b)
            }
            PackedLayer::Conv { bits, bias } => {
                let b: Vec<Counted> = bias.iter().map(|&v| Counted::new(v)).collect();
                kernels::conv(&counted, x.dims4("tally").ok()?, bits, &b)
            }
            _ => return None,
        };
        Some(out.iter().fold(OpTally::default(), |t, c| t + c.tally))
    }
}

/// Per-sample input shape plus the layer stack.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedModel {
    pub input_shape: Vec<usize>,
    pub layers: Vec<PackedLayer>,
}

impl PackedModel {
    /// Deterministically binarizes every binary weight layer of `net`.
    pub fn from_network(net: &Network<f32>) -> Result<Self> {
        let mut layers = Vec::with_capacity(net.layers().len());
        for (i, layer) in net.layers().iter().enumerate() {
            let binary = net.layer_mode(i, BinarizationMode::Deterministic) != BinarizationMode::Off;
            layers.push(match layer {
                Layer::Dense(d) if binary => PackedLayer::dense(&binarize_det(&d.weight), d.bias.data().to_vec())?,
                Layer::Dense(d) => PackedLayer::RealDense {
                    weight: d.weight.clone(),
                    bias: d.bias.data().to_vec(),
                },
                Layer::Conv(c) => PackedLayer::conv(&binarize_det(&c.kernels), c.bias.data().to_vec())?,
                Layer::BatchNorm(b) => {
                    let (scale, shift) = b.inference_affine();
                    PackedLayer::Affine { scale, shift }
                }
                Layer::Relu(_) => PackedLayer::Relu,
                Layer::MaxPool(_) => PackedLayer::MaxPool2,
            });
        }
        Ok(PackedModel {
            input_shape: net.input_shape().to_vec(),
            layers,
        })
    }

    fn check_input(&self, x: &Tensor<f32>) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            let mut want = vec![0];
            want.extend_from_slice(&self.input_shape);
            return Err(Error::dim("packed model input", x.shape(), &want));
        }
        Ok(())
    }

    /// Class scores for a batch `N × input_shape`.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            a = layer.forward(&a)?;
        }
        Ok(a)
    }

    /// Runs the forward pass while counting the arithmetic done inside the
    /// binary weight layers.
    pub fn forward_tallied(&self, x: &Tensor<f32>) -> Result<(Tensor<f32>, OpTally)> {
        self.check_input(x)?;
        let mut a = x.clone();
        let mut total = OpTally::default();
        for layer in &self.layers {
            if let Some(t) = layer.tally(&a) {
                total = total + t;
            }
            a = layer.forward(&a)?;
        }
        Ok((a, total))
    }

    pub fn classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                PackedLayer::Dense { bits, .. } => Some(bits.rows()),
                PackedLayer::RealDense { weight, .. } => Some(weight.shape()[1]),
                _ => None,
            })
            .unwrap_or(0)
    }
}
