//! `.bcpk` files, all integers and floats little-endian:
//!
//! ```text
//! magic "BCPK" | version u16 | input rank u32 | input dims u32…
//! layer count u32 | per layer: kind u8, dim a u32, dim b u32
//! per layer payload:
//!   dense (1)       a = d_in, b = d_out   b rows of ceil(a/64) u64 words, then b f32 biases
//!   conv (2)        a = C·9,  b = F       b rows of ceil(a/64) u64 words, then b f32 biases
//!   real dense (3)  a = d_in, b = d_out   a·b f32 weights (row-major d_in × d_out), b f32 biases
//!   affine (4)      a = features, b = 0   a f32 scales, a f32 shifts
//!   relu (5), maxpool2 (6)                no payload
//! ```

use std::fs;
use std::path::Path;

use super::{Bitmap, PackedLayer, PackedModel};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PACKED_MAGIC: &[u8; 4] = b"BCPK";
pub const PACKED_VERSION: u16 = 1;

fn table_entry(layer: &PackedLayer) -> (u8, u32, u32) {
    match layer {
        PackedLayer::Dense { bits, .. } => (1, bits.cols() as u32, bits.rows() as u32),
        PackedLayer::Conv { bits, .. } => (2, bits.cols() as u32, bits.rows() as u32),
        PackedLayer::RealDense { weight, .. } => (3, weight.shape()[0] as u32, weight.shape()[1] as u32),
        PackedLayer::Affine { scale, .. } => (4, scale.len() as u32, 0),
        PackedLayer::Relu => (5, 0, 0),
        PackedLayer::MaxPool2 => (6, 0, 0),
    }
}

fn floats(w: &mut Writer, v: &[f32]) {
    for &x in v {
        w.f32(x);
    }
}

fn read_floats(r: &mut Reader, n: usize, field: &str) -> Result<Vec<f32>> {
    let raw = r.take(n.checked_mul(4).ok_or_else(|| r.err(field))?, field)?;
    Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_bitmap(r: &mut Reader, rows: usize, cols: usize, field: &str) -> Result<Bitmap> {
    let n = rows
        .checked_mul(Bitmap::words_per_row(cols))
        .ok_or_else(|| r.err(field))?;
    let raw = r.take(n.checked_mul(8).ok_or_else(|| r.err(field))?, field)?;
    let words = raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    Bitmap::from_words(rows, cols, words).map_err(|_| r.err(field))
}

impl PackedModel {
    /// Bytes before the first layer payload.
    pub fn header_bytes(&self) -> usize {
        4 + 2 + 4 + 4 * self.input_shape.len() + 4 + 9 * self.layers.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(PACKED_MAGIC);
        w.u16(PACKED_VERSION);
        w.u32(self.input_shape.len() as u32);
        for &d in &self.input_shape {
            w.u32(d as u32);
        }
        w.u32(self.layers.len() as u32);
        for layer in &self.layers {
            let (kind, a, b) = table_entry(layer);
            w.u8(kind);
            w.u32(a);
            w.u32(b);
        }
        for layer in &self.layers {
            match layer {
                PackedLayer::Dense { bits, bias } | PackedLayer::Conv { bits, bias } => {
                    for &word in bits.words() {
                        w.u64(word);
                    }
                    floats(&mut w, bias);
                }
                PackedLayer::RealDense { weight, bias } => {
                    floats(&mut w, weight.data());
                    floats(&mut w, bias);
                }
                PackedLayer::Affine { scale, shift } => {
                    floats(&mut w, scale);
                    floats(&mut w, shift);
                }
                PackedLayer::Relu | PackedLayer::MaxPool2 => {}
            }
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8], path: Option<&Path>) -> Result<Self> {
        let mut r = Reader::new(data, path);
        if r.take(4, "magic")? != PACKED_MAGIC {
            return Err(r.err("magic"));
        }
        let version = r.u16("version")?;
        if version != PACKED_VERSION {
            return Err(r.err(&format!("version ({version}, expected {PACKED_VERSION})")));
        }
        let rank = r.u32("input rank")? as usize;
        if rank == 0 || rank > 3 {
            return Err(r.err("input rank"));
        }
        let input_shape = (0..rank)
            .map(|_| r.u32("input dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = r.u32("layer count")? as usize;
        if count > data.len() {
            return Err(r.err("layer count"));
        }
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            table.push((r.u8("layer kind")?, r.u32("layer dims")? as usize, r.u32("layer dims")? as usize));
        }
        let mut layers = Vec::with_capacity(count);
        for (i, &(kind, a, b)) in table.iter().enumerate() {
            let field = format!("layer {i} payload");
            layers.push(match kind {
                1 | 2 => {
                    let bits = read_bitmap(&mut r, b, a, &field)?;
                    let bias = read_floats(&mut r, b, &field)?;
                    if kind == 1 {
                        PackedLayer::Dense { bits, bias }
                    } else {
                        if a % 9 != 0 {
                            return Err(r.err(&format!("layer {i} dims")));
                        }
                        PackedLayer::Conv { bits, bias }
                    }
                }
                3 => {
                    let len = a.checked_mul(b).ok_or_else(|| r.err(&field))?;
                    let weight = read_floats(&mut r, len, &field)?;
                    PackedLayer::RealDense {
                        weight: Tensor::new(&[a, b], weight)?,
                        bias: read_floats(&mut r, b, &field)?,
                    }
                }
                4 => PackedLayer::Affine {
                    scale: read_floats(&mut r, a, &field)?,
                    shift: read_floats(&mut r, a, &field)?,
                },
                5 => PackedLayer::Relu,
                6 => PackedLayer::MaxPool2,
                k => return Err(r.err(&format!("layer {i} kind ({k})"))),
            });
        }
        r.expect_end()?;
        Ok(PackedModel { input_shape, layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_bytes()).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data, Some(path))
    }
}
