//! Sign-bitmap kernels. The accumulator type is only required to add and
//! subtract, so the weight loops cannot multiply.

use std::ops::{Add, Sub};

use rayon::prelude::*;

use super::bits::Bitmap;
use crate::tensor::{tap_range, KERNEL, KERNEL_AREA};

pub trait Accumulate: Copy + Send + Sync + Add<Output = Self> + Sub<Output = Self> {
    fn zero() -> Self;

    /// `self + x` when `positive`, else `self − x`.
    #[inline]
    fn add_signed(self, x: Self, positive: bool) -> Self {
        if positive {
            self + x
        } else {
            self - x
        }
    }
}

impl Accumulate for f32 {
    fn zero() -> Self {
        0.0
    }

    /// Flips the sign bit of `x` instead of branching; `a + (−x)` and `a − x`
    /// are the same IEEE operation.
    #[inline]
    fn add_signed(self, x: Self, positive: bool) -> Self {
        self + f32::from_bits(x.to_bits() ^ ((!positive as u32) << 31))
    }
}

/// A value that counts the arithmetic performed to produce it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Counted {
    pub value: f32,
    pub tally: OpTally,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpTally {
    pub adds: u64,
    pub subs: u64,
    pub muls: u64,
}

impl Add for OpTally {
    type Output = OpTally;
    fn add(self, o: OpTally) -> OpTally {
        OpTally {
            adds: self.adds + o.adds,
            subs: self.subs + o.subs,
            muls: self.muls + o.muls,
        }
    }
}

impl Counted {
    pub fn new(value: f32) -> Self {
        Counted {
            value,
            tally: OpTally::default(),
        }
    }
}

impl Add for Counted {
    type Output = Counted;
    fn add(self, o: Counted) -> Counted {
        let mut tally = self.tally + o.tally;
        tally.adds += 1;
        Counted {
            value: self.value + o.value,
            tally,
        }
    }
}

impl Sub for Counted {
    type Output = Counted;
    fn sub(self, o: Counted) -> Counted {
        let mut tally = self.tally + o.tally;
        tally.subs += 1;
        Counted {
            value: self.value - o.value,
            tally,
        }
    }
}

impl std::ops::Mul for Counted {
    type Output = Counted;
    fn mul(self, o: Counted) -> Counted {
        let mut tally = self.tally + o.tally;
        tally.muls += 1;
        Counted {
            value: self.value * o.value,
            tally,
        }
    }
}

impl Accumulate for Counted {
    fn zero() -> Self {
        Counted::default()
    }
}

/// `y[n, j] = Σ_i ±x[n, i] + b[j]` for an `N × d_in` input and a bitmap
/// with one row per output unit. Terms are accumulated in ascending `i`
/// from zero and the bias is added last, as in the dense matmul path.
pub fn dense<A: Accumulate>(x: &[A], n: usize, bits: &Bitmap, bias: &[A]) -> Vec<A> {
    let (d_out, d_in) = (bits.rows(), bits.cols());
    // Transposed input: one contiguous run of N samples per input index, so
    // the sign is fixed across the innermost loop.
    let mut xt = vec![A::zero(); d_in * n];
    for s in 0..n {
        for i in 0..d_in {
            xt[i * n + s] = x[s * d_in + i];
        }
    }
    let columns: Vec<Vec<A>> = (0..d_out)
        .into_par_iter()
        .map(|j| {
            let mut acc = vec![A::zero(); n];
            let row = bits.row(j);
            for i in 0..d_in {
                let positive = row[i / 64] >> (i % 64) & 1 == 1;
                for (a, &v) in acc.iter_mut().zip(&xt[i * n..(i + 1) * n]) {
                    *a = a.add_signed(v, positive);
                }
            }
            for a in acc.iter_mut() {
                *a = *a + bias[j];
            }
            acc
        })
        .collect();
    let mut y = vec![A::zero(); n * d_out];
    for (j, col) in columns.into_iter().enumerate() {
        for (s, v) in col.into_iter().enumerate() {
            y[s * d_out + j] = v;
        }
    }
    y
}

/// Same-padded 3×3 correlation over `N × C × H × W` with one bitmap row of
/// `C·9` signs per filter, replaying the tap order of the unpacked
/// convolution: channel, kernel row, kernel column; bias last.
pub fn conv<A: Accumulate>(x: &[A], shape: [usize; 4], bits: &Bitmap, bias: &[A]) -> Vec<A> {
    let [n, c, h, w] = shape;
    let f = bits.rows();
    let plane = h * w;
    let mut out = vec![A::zero(); n * f * plane];
    if plane == 0 {
        return out;
    }
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, o)| {
        let (s, fi) = (idx / f, idx % f);
        let row = bits.row(fi);
        for ci in 0..c {
            let src = &x[(s * c + ci) * plane..(s * c + ci + 1) * plane];
            for kr in 0..KERNEL {
                let dy = kr as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kcol in 0..KERNEL {
                    let dx = kcol as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let bit = ci * KERNEL_AREA + kr * KERNEL + kcol;
                    let positive = row[bit / 64] >> (bit % 64) & 1 == 1;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut o[y * w + x0..y * w + x1];
                        let start = ((sy * w) as isize + x0 as isize + dx) as usize;
                        for (ov, &sv) in orow.iter_mut().zip(&src[start..start + (x1 - x0)]) {
                            *ov = ov.add_signed(sv, positive);
                        }
                    }
                }
            }
        }
        for ov in o.iter_mut() {
            *ov = *ov + bias[fi];
        }
    });
    out
}
