//! Dense row-major tensors and the handful of kernels the layers need.
//!
//! Every kernel pins the order in which it accumulates into an output element.
//! Parallelism is only ever across output elements (rows, planes), so results
//! are bit-identical regardless of how many threads rayon uses. The packed
//! inference kernels replay exactly the same orders, which is what makes
//! packed and unpacked forward passes comparable bit for bit.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is the production type; `f64` exists
/// so gradients can be checked against finite differences.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("Tensor::new", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable view of the elements. The shape stays fixed.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same elements under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Leading dimension and the product of the rest.
    pub fn as_matrix_dims(&self) -> (usize, usize) {
        match self.shape.split_first() {
            Some((&rows, rest)) => (rows, rest.iter().product()),
            None => (1, 1),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Self> {
        let [r, c] = self.dims2("transpose")?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(&[c, r], out)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(Error::dim(op, &self.shape, &[0, 0])),
        }
    }

    pub(crate) fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::dim(op, &self.shape, &[0, 0, 0, 0])),
        }
    }
}

/// `C = A·B` for `A: m×k`, `B: k×n`.
///
/// Each `C[i,j]` starts at zero and receives `A[i,t]·B[t,j]` for `t = 0..k`
/// in ascending order.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [m, k] = a.dims2("matmul")?;
    let [k2, n] = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    if n > 0 {
        let (ad, bd) = (a.data(), b.data());
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let arow = &ad[i * k..(i + 1) * k];
            for (t, &av) in arow.iter().enumerate() {
                let brow = &bd[t * n..(t + 1) * n];
                for (c, &bv) in row.iter_mut().zip(brow) {
                    *c += av * bv;
                }
            }
        });
    }
    Tensor::new(&[m, n], out)
}

pub const KERNEL: usize = 3;
pub const KERNEL_AREA: usize = KERNEL * KERNEL;

/// Valid output range `[lo, hi)` along one axis for a tap at `offset`
/// (input index = output index + offset) on an axis of length `len`.
#[inline]
pub(crate) fn tap_range(offset: isize, len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// 3×3 stride-1 cross-correlation with one pixel of zero padding.
///
/// Out-of-image taps are skipped. Each output pixel accumulates over input
/// channels, then kernel rows, then kernel columns, starting from zero; the
/// bias is added last.
pub fn conv2d_same<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("conv2d_same")?;
    let [f, kc, kh, kw] = kernels.dims4("conv2d_same")?;
    if kc != c || kh != KERNEL || kw != KERNEL || bias.len() != f {
        return Err(Error::dim("conv2d_same", input.shape(), kernels.shape()));
    }
    let plane = h * w;
    let mut out = vec![T::zero(); n * f * plane];
    if plane > 0 {
        let (xd, kd, bd) = (input.data(), kernels.data(), bias.data());
        out.par_chunks_mut(plane).enumerate().for_each(|(idx, o)| {
            let (s, fi) = (idx / f, idx % f);
            let kf = &kd[fi * c * KERNEL_AREA..(fi + 1) * c * KERNEL_AREA];
            for ci in 0..c {
                let src = &xd[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                for kr in 0..KERNEL {
                    let dy = kr as isize - 1;
                    let (y0, y1) = tap_range(dy, h);
                    for kcol in 0..KERNEL {
                        let dx = kcol as isize - 1;
                        let (x0, x1) = tap_range(dx, w);
                        let wv = kf[ci * KERNEL_AREA + kr * KERNEL + kcol];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let orow = &mut o[y * w + x0..y * w + x1];
                            let srow_start = (sy * w) as isize + x0 as isize + dx;
                            let srow = &src[srow_start as usize..srow_start as usize + (x1 - x0)];
                            for (ov, &sv) in orow.iter_mut().zip(srow) {
                                *ov += sv * wv;
                            }
                        }
                    }
                }
            }
            let b = bd[fi];
            for ov in o.iter_mut() {
                *ov += b;
            }
        });
    }
    Tensor::new(&[n, f, h, w], out)
}

/// Gradient of [`conv2d_same`] with respect to its input: a full
/// correlation of `grad_out` with the spatially flipped kernels.
pub fn conv2d_same_grad_input<T: Real>(
    grad_out: &Tensor<T>,
    kernels: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, f, h, w] = grad_out.dims4("conv2d_same_grad_input")?;
    let [kf, c, _, _] = kernels.dims4("conv2d_same_grad_input")?;
    if kf != f {
        return Err(Error::dim("conv2d_same_grad_input", grad_out.shape(), kernels.shape()));
    }
    let plane = h * w;
    let mut out = vec![T::zero(); n * c * plane];
    if plane > 0 {
        let (gd, kd) = (grad_out.data(), kernels.data());
        out.par_chunks_mut(plane).enumerate().for_each(|(idx, gi)| {
            let (s, ci) = (idx / c, idx % c);
            for fi in 0..f {
                let g = &gd[(s * f + fi) * plane..(s * f + fi + 1) * plane];
                for kr in 0..KERNEL {
                    // input pixel y receives from output pixel y - dy
                    let dy = 1 - kr as isize;
                    let (y0, y1) = tap_range(dy, h);
                    for kcol in 0..KERNEL {
                        let dx = 1 - kcol as isize;
                        let (x0, x1) = tap_range(dx, w);
                        let wv = kd[(fi * c + ci) * KERNEL_AREA + kr * KERNEL + kcol];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let start = (sy * w) as isize + x0 as isize + dx;
                            let grow = &g[start as usize..start as usize + (x1 - x0)];
                            for (v, &gv) in gi[y * w + x0..y * w + x1].iter_mut().zip(grow) {
                                *v += gv * wv;
                            }
                        }
                    }
                }
            }
        });
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Gradient of [`conv2d_same`] with respect to its kernels.
pub fn conv2d_same_grad_kernels<T: Real>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("conv2d_same_grad_kernels")?;
    let [gn, f, gh, gw] = grad_out.dims4("conv2d_same_grad_kernels")?;
    if gn != n || gh != h || gw != w {
        return Err(Error::dim("conv2d_same_grad_kernels", input.shape(), grad_out.shape()));
    }
    let plane = h * w;
    let mut out = vec![T::zero(); f * c * KERNEL_AREA];
    let (xd, gd) = (input.data(), grad_out.data());
    out.par_chunks_mut(KERNEL_AREA).enumerate().for_each(|(idx, gk)| {
        let (fi, ci) = (idx / c, idx % c);
        for (tap, slot) in gk.iter_mut().enumerate() {
            let dy = (tap / KERNEL) as isize - 1;
            let dx = (tap % KERNEL) as isize - 1;
            let (y0, y1) = tap_range(dy, h);
            let (x0, x1) = tap_range(dx, w);
            let mut acc = T::zero();
            for s in 0..n {
                let g = &gd[(s * f + fi) * plane..(s * f + fi + 1) * plane];
                let x = &xd[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    for xx in x0..x1 {
                        let sx = (xx as isize + dx) as usize;
                        acc += g[y * w + xx] * x[sy * w + sx];
                    }
                }
            }
            *slot = acc;
        }
    });
    Tensor::new(&[f, c, KERNEL, KERNEL], out)
}

/// 2×2, stride-2 max pooling.
///
/// Returns the pooled tensor and, for each output element, the flat index
/// into `input` of the winning element. Windows are scanned row-major and the
/// first maximum wins ties.
pub fn maxpool2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.dims4("maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("maxpool2", input.shape(), &[2, 2]));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let xd = input.data();
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, arg))
}

/// Routes each pooled gradient back to its recorded argmax.
pub fn maxpool2_grad<T: Real>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::dim("maxpool2_grad", grad_out.shape(), &[argmax.len()]));
    }
    let mut gi = Tensor::zeros(input_shape);
    let d = gi.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(argmax) {
        d[i] += g;
    }
    Ok(gi)
}
