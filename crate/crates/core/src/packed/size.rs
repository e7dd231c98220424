use std::fmt;

use super::{PackedLayer, PackedModel};
use crate::network::Network;

/// Weight storage of one binary layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSize {
    pub layer: usize,
    pub name: &'static str,
    pub weights: usize,
    /// 4 bytes per weight.
    pub fp32_bytes: usize,
    /// `ceil(weights / 8)`.
    pub packed_bytes: usize,
    /// Bitmap bytes with each row padded to whole 64-bit words.
    pub padded_bytes: usize,
}

/// Weight-payload sizes of a network stored as 32-bit floats versus sign
/// bitmaps. Ratios cover the binary weight matrices only; biases, batch-norm
/// parameters and any full-precision layer are listed separately.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SizeReport {
    pub layers: Vec<LayerSize>,
    /// Full-precision parameters, identical in both encodings.
    pub other_param_bytes: usize,
    /// Packed file header and layer table.
    pub header_bytes: usize,
}

impl SizeReport {
    pub fn fp32_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.fp32_bytes).sum()
    }

    pub fn packed_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.packed_bytes).sum()
    }

    pub fn padded_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.padded_bytes).sum()
    }

    /// fp32 bytes / tightly packed bitmap bytes.
    pub fn ratio(&self) -> f64 {
        self.fp32_bytes() as f64 / self.packed_bytes() as f64
    }

    /// fp32 bytes / (row-padded bitmap bytes + file header).
    pub fn ratio_with_overhead(&self) -> f64 {
        self.fp32_bytes() as f64 / (self.padded_bytes() + self.header_bytes) as f64
    }
}

impl fmt::Display for SizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layer  kind            weights     fp32 bytes   packed bytes   padded bytes")?;
        for l in &self.layers {
            writeln!(
                f,
                "{:<6} {:<15} {:>9} {:>14} {:>14} {:>14}",
                l.layer, l.name, l.weights, l.fp32_bytes, l.packed_bytes, l.padded_bytes
            )?;
        }
        writeln!(
            f,
            "total  {:<15} {:>9} {:>14} {:>14} {:>14}",
            "",
            self.layers.iter().map(|l| l.weights).sum::<usize>(),
            self.fp32_bytes(),
            self.packed_bytes(),
            self.padded_bytes()
        )?;
        writeln!(f, "other parameters: {} bytes; header: {} bytes", self.other_param_bytes, self.header_bytes)?;
        write!(
            f,
            "weight compression: {:.2}x ({:.2}x with padding and header)",
            self.ratio(),
            self.ratio_with_overhead()
        )
    }
}

/// Sizes of `packed`, exported from `net`.
pub fn model_size_report(net: &Network<f32>, packed: &PackedModel) -> SizeReport {
    debug_assert_eq!(net.layers().len(), packed.layers.len());
    let mut layers = Vec::new();
    let mut other = 0;
    for (i, layer) in packed.layers.iter().enumerate() {
        match layer {
            PackedLayer::Dense { bits, bias } | PackedLayer::Conv { bits, bias } => {
                let weights = bits.rows() * bits.cols();
                layers.push(LayerSize {
                    layer: i,
                    name: layer.name(),
                    weights,
                    fp32_bytes: 4 * weights,
                    packed_bytes: bits.unpadded_bytes(),
                    padded_bytes: bits.padded_bytes(),
                });
                other += 4 * bias.len();
            }
            PackedLayer::RealDense { weight, bias } => other += 4 * (weight.len() + bias.len()),
            PackedLayer::Affine { scale, shift } => other += 4 * (scale.len() + shift.len()),
            PackedLayer::Relu | PackedLayer::MaxPool2 => {}
        }
    }
    SizeReport {
        layers,
        other_param_bytes: other,
        header_bytes: packed.header_bytes(),
    }
}
