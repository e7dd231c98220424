//! Global contrast normalization and ZCA whitening.

use rand::seq::index;
use rayon::prelude::*;

use crate::binarize::{Domain, RngStream};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};

pub const GCN_EPSILON: f64 = 1e-8;
pub const ZCA_EPSILON: f64 = 0.1;
const JACOBI_TOLERANCE: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Per image: subtract the mean, divide by `max(std, 1e-8)`. Statistics are
/// taken in `f64` over all channels and pixels of the image.
pub fn gcn(images: &Tensor<f32>) -> Tensor<f32> {
    let n = images.shape()[0];
    let d = images.len() / n.max(1);
    let mut out = images.clone();
    out.data_mut().par_chunks_mut(d.max(1)).for_each(|img| {
        let mean = img.iter().map(|&x| x as f64).sum::<f64>() / d as f64;
        let var = img.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / d as f64;
        let scale = var.sqrt().max(GCN_EPSILON);
        for x in img.iter_mut() {
            *x = ((*x as f64 - mean) / scale) as f32;
        }
    });
    out
}

/// Eigendecomposition of a symmetric `d × d` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues and eigenvectors, the latter as the
/// rows of a `d × d` matrix, in no particular order.
///
/// Sweeps stop once the off-diagonal Frobenius norm drops below
/// `tolerance` times the full norm.
pub fn jacobi_eigen(matrix: &[f64], d: usize, tolerance: f64, max_sweeps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(matrix.len(), d * d);
    let mut a = matrix.to_vec();
    let mut vt = vec![0.0; d * d];
    for i in 0..d {
        vt[i * d + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[i * d + j] * a[i * d + j];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&a) > tolerance * total {
        if sweeps == max_sweeps {
            return Err(Error::Numeric(format!(
                "Jacobi eigensolver did not converge in {max_sweeps} sweeps (off-diagonal norm {:e})",
                off(&a)
            )));
        }
        sweeps += 1;
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * d + p], a[q * d + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A' = Jᵀ A J with J rotating the (p, q) plane: rows first,
                // then mirror into the columns.
                for k in 0..d {
                    let (akp, akq) = (a[p * d + k], a[q * d + k]);
                    a[p * d + k] = c * akp - s * akq;
                    a[q * d + k] = s * akp + c * akq;
                }
                for k in 0..d {
                    a[k * d + p] = a[p * d + k];
                    a[k * d + q] = a[q * d + k];
                }
                a[p * d + p] = app - t * apq;
                a[q * d + q] = aqq + t * apq;
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;
                for k in 0..d {
                    let (vp, vq) = (vt[p * d + k], vt[q * d + k]);
                    vt[p * d + k] = c * vp - s * vq;
                    vt[q * d + k] = s * vp + c * vq;
                }
            }
        }
    }
    Ok(((0..d).map(|i| a[i * d + i]).collect(), vt))
}

/// Fitted whitening: `apply(x) = (x − mean) · W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZcaTransform {
    pub mean: Vec<f32>,
    /// `d × d`, symmetric.
    pub whitening: Tensor<f32>,
    pub epsilon: f64,
}

impl ZcaTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let n = images.shape()[0];
        let d = self.dim();
        if images.len() != n * d {
            return Err(Error::dim("zca_apply", images.shape(), &[n, d]));
        }
        let mut centered = images.clone().reshape(&[n, d])?;
        centered.data_mut().par_chunks_mut(d).for_each(|row| {
            for (x, m) in row.iter_mut().zip(&self.mean) {
                *x -= m;
            }
        });
        matmul(&centered, &self.whitening)?.reshape(images.shape())
    }
}

/// Fits ZCA on `images` (flattened per sample). With `subsample = Some((k,
/// seed))` and more than `k` images, the covariance is estimated from `k`
/// images drawn without replacement.
///
/// The covariance is the biased (`1/N`) estimate.
pub fn zca_fit(images: &Tensor<f32>, epsilon: f64, subsample: Option<(usize, u64)>) -> Result<ZcaTransform> {
    let n_all = images.shape()[0];
    if n_all == 0 {
        return Err(Error::Argument("cannot fit ZCA on an empty set".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Argument(format!("ZCA epsilon must be non-negative, got {epsilon}")));
    }
    let d = images.len() / n_all;
    let rows: Vec<usize> = match subsample {
        Some((k, seed)) if k < n_all => {
            let mut rng = RngStream::keyed(seed, Domain::Subsample, 0, 0);
            let mut picked = index::sample(rng.rng_mut(), n_all, k).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..n_all).collect(),
    };
    let n = rows.len() as f64;
    let data = images.data();

    let mut mean = vec![0.0f64; d];
    for &r in &rows {
        for (m, &x) in mean.iter_mut().zip(&data[r * d..(r + 1) * d]) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    // Upper triangle by rows in parallel, then mirrored.
    let mut cov = vec![0.0f64; d * d];
    cov.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        for &r in &rows {
            let x = &data[r * d..(r + 1) * d];
            let xi = x[i] as f64 - mean[i];
            for j in i..d {
                out[j] += xi * (x[j] as f64 - mean[j]);
            }
        }
        for v in &mut out[i..] {
            *v /= n;
        }
    });
    for i in 0..d {
        for j in 0..i {
            cov[i * d + j] = cov[j * d + i];
        }
    }

    let (lambda, vt) = jacobi_eigen(&cov, d, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS)?;
    // W = U diag(1/sqrt(λ+ε)) Uᵀ; vt rows are the columns of U.
    let inv: Vec<f64> = lambda.iter().map(|&l| 1.0 / (l.max(0.0) + epsilon).sqrt()).collect();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("singular covariance with zero ZCA epsilon".into()));
    }
    let mut w = vec![0.0f64; d * d];
    w.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        for k in 0..d {
            let uik = vt[k * d + i] * inv[k];
            if uik == 0.0 {
                continue;
            }
            let row = &vt[k * d..(k + 1) * d];
            for (o, &ujk) in out.iter_mut().zip(row) {
                *o += uik * ujk;
            }
        }
    });
    // Exact symmetry regardless of rounding order.
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (w[i * d + j] + w[j * d + i]);
            w[i * d + j] = avg;
            w[j * d + i] = avg;
        }
    }

    Ok(ZcaTransform {
        mean: mean.iter().map(|&m| m as f32).collect(),
        whitening: Tensor::new(&[d, d], w.iter().map(|&x| x as f32).collect())?,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::Rng;

    fn covariance(x: &[f32], n: usize, d: usize) -> Vec<f64> {
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                mean[j] += x[r * d + j] as f64 / n as f64;
            }
        }
        let mut c = vec![0.0; d * d];
        for r in 0..n {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += (x[r * d + i] as f64 - mean[i]) * (x[r * d + j] as f64 - mean[j]) / n as f64;
                }
            }
        }
        c
    }

    /// Correlated synthetic data: z · M with z standard-normal-ish.
    fn correlated(n: usize, d: usize, seed: u64) -> Tensor<f32> {
        let mut rng = RngStream::new(seed);
        let mix: Vec<f64> = (0..d * d).map(|_| rng.rng_mut().random_range(-1.0..1.0)).collect();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            let z: Vec<f64> = (0..d).map(|_| rng.rng_mut().random_range(-1.7..1.7)).collect();
            for j in 0..d {
                out.push((0..d).map(|k| z[k] * mix[k * d + j]).sum::<f64>() as f32 + j as f32);
            }
        }
        Tensor::new(&[n, 1, 1, d], out).unwrap()
    }

    #[test]
    fn gcn_constant_image_is_zero() {
        let x = Tensor::full(&[2, 1, 3, 3], 0.7f32);
        assert!(gcn(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_matches_two_pass_oracle() {
        let mut rng = RngStream::new(4);
        let x = Tensor::from_fn(&[3, 3, 4, 4], |_| rng.uniform());
        let y = gcn(&x);
        for (img, out) in x.data().chunks(48).zip(y.data().chunks(48)) {
            let mean: f64 = img.iter().map(|&v| v as f64).sum::<f64>() / 48.0;
            let std = (img.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 48.0).sqrt();
            for (&v, &o) in img.iter().zip(out) {
                assert_abs_diff_eq!(o as f64, (v as f64 - mean) / std, epsilon = 1e-6);
            }
            let m: f64 = out.iter().map(|&v| v as f64).sum::<f64>() / 48.0;
            let s = (out.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / 48.0).sqrt();
            assert!(m.abs() < 1e-6);
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn jacobi_agrees_with_dense_solver() {
        let d = 8;
        let x = correlated(200, d, 11);
        let c = covariance(x.data(), 200, d);
        let (mut ours, _) = jacobi_eigen(&c, d, 1e-10, 100).unwrap();
        let mut theirs: Vec<f64> = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &c)).eigenvalues.iter().copied().collect();
        ours.sort_by(f64::total_cmp);
        theirs.sort_by(f64::total_cmp);
        for (a, b) in ours.iter().zip(&theirs) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9 * theirs[d - 1]);
        }
    }

    #[test]
    fn jacobi_reports_non_convergence() {
        let c = [2.0, 1.0, 1.0, 3.0];
        let err = jacobi_eigen(&c, 2, 1e-10, 0).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn whitening_is_identity_for_isotropic_data() {
        // ±1 on every axis, all sign patterns: zero mean, identity covariance.
        let d = 4;
        let data: Vec<f32> = (0..16u32)
            .flat_map(|m| (0..d).map(move |j| if m >> j & 1 == 1 { 1.0 } else { -1.0 }))
            .collect();
        let x = Tensor::new(&[16, 1, 1, d], data).unwrap();
        let t = zca_fit(&x, 1e-12, None).unwrap();
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(t.whitening.data()[i * d + j], expect, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn whitened_spectrum_matches_dense_oracle() {
        let (n, d, eps) = (500, 8, 0.1);
        let x = correlated(n, d, 3);
        let t = zca_fit(&x, eps, None).unwrap();
        let w = t.whitening.data();
        for i in 0..d {
            for j in 0..d {
                assert!((w[i * d + j] - w[j * d + i]).abs() <= 1e-5);
            }
        }

        let y = t.apply(&x).unwrap();
        let cy = covariance(y.data(), n, d);
        let cx = covariance(x.data(), n, d);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cx));
        // In the eigenbasis U of the input covariance, the output covariance
        // is diag(λ / (λ + ε)).
        let u = eig.eigenvectors;
        let cy = DMatrix::from_row_slice(d, d, &cy);
        let rotated = u.transpose() * cy * &u;
        for i in 0..d {
            let l = eig.eigenvalues[i];
            for j in 0..d {
                let expect = if i == j { l / (l + eps) } else { 0.0 };
                assert_abs_diff_eq!(rotated[(i, j)], expect, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn fitted_data_is_near_diagonal() {
        // The whitened spectrum is λ/(λ+ε), so the off-diagonal mass is small
        // only when every λ is well above ε: scale up a correlated set.
        let (n, d) = (4000, 64);
        let mut x = correlated(n, d, 8);
        let mut rng = RngStream::new(80);
        for v in x.data_mut() {
            *v = *v * 4.0 + rng.rng_mut().random_range(-40.0..40.0);
        }
        let y = zca_fit(&x, ZCA_EPSILON, None).unwrap().apply(&x).unwrap();
        let c = covariance(y.data(), n, d);
        let (mut diag, mut off) = (0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                let v = c[i * d + j] * c[i * d + j];
                if i == j {
                    diag += v;
                } else {
                    off += v;
                }
            }
        }
        assert!(off.sqrt() < 0.01 * diag.sqrt(), "off {} diag {}", off.sqrt(), diag.sqrt());
    }

    #[test]
    fn subsample_is_seeded() {
        let x = correlated(300, 6, 1);
        let a = zca_fit(&x, 0.1, Some((100, 9))).unwrap();
        let b = zca_fit(&x, 0.1, Some((100, 9))).unwrap();
        let c = zca_fit(&x, 0.1, Some((100, 10))).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(zca_fit(&x, 0.1, Some((1000, 9))).unwrap(), zca_fit(&x, 0.1, None).unwrap());
    }
}
