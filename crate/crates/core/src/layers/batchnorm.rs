use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_EPSILON: f64 = 1e-4;
pub const BN_MOMENTUM: f64 = 0.9;

/// Batch normalization over features (`N × D` input) or channels
/// (`N × C × H × W` input).
///
/// Inference uses the running statistics folded into a per-feature affine
/// `y = x·scale + shift`; the packed inference engine evaluates the very same
/// affine, so both paths agree bit for bit.
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Real = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T: Real> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T: Real> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Feature count, elements per feature, and the stride separating
/// consecutive spatial positions of one feature.
fn layout(shape: &[usize], features: usize) -> Result<(usize, usize)> {
    match *shape {
        [n, d] if d == features => Ok((n, 1)),
        [n, c, h, w] if c == features => Ok((n * h * w, h * w)),
        _ => Err(Error::dim("batchnorm", shape, &[features])),
    }
}

#[inline]
fn feature_of(i: usize, inner: usize, features: usize) -> usize {
    (i / inner) % features
}

/// `y = x·scale[f] + shift[f]` with `f` the feature (dense) or channel
/// (convolutional) of each element.
pub fn apply_affine<T: Real>(x: &Tensor<T>, scale: &[T], shift: &[T]) -> Result<Tensor<T>> {
    let features = scale.len();
    let (_, inner) = layout(x.shape(), features)?;
    let mut y = x.clone();
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        let f = feature_of(i, inner, features);
        *v = *v * scale[f] + shift[f];
    }
    Ok(y)
}

impl<T: Real> BatchNorm<T> {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[features], T::one()),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], T::one()),
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Per-feature `(scale, shift)` with `scale = γ/√(var + ε)` and
    /// `shift = β − mean·scale`, from the running statistics.
    pub fn inference_affine(&self) -> (Vec<T>, Vec<T>) {
        let eps = T::of(BN_EPSILON);
        let mut scale = Vec::with_capacity(self.features());
        let mut shift = Vec::with_capacity(self.features());
        for f in 0..self.features() {
            let s = self.gamma.data()[f] / (self.running_var.data()[f] + eps).sqrt();
            scale.push(s);
            shift.push(self.beta.data()[f] - self.running_mean.data()[f] * s);
        }
        (scale, shift)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (scale, shift) = self.inference_affine();
        apply_affine(x, &scale, &shift)
    }

    /// Normalizes with batch statistics, updates the running estimates and
    /// caches what [`BatchNorm::backward`] needs.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let features = self.features();
        let (count, inner) = layout(x.shape(), features)?;
        if x.shape()[0] < 2 {
            return Err(Error::Config(format!(
                "batch normalization needs a batch of at least 2 in training, got {}",
                x.shape()[0]
            )));
        }
        let m = T::of(count as f64);
        let mut mean = vec![T::zero(); features];
        for (i, &v) in x.data().iter().enumerate() {
            mean[feature_of(i, inner, features)] += v;
        }
        mean.iter_mut().for_each(|s| *s /= m);
        let mut var = vec![T::zero(); features];
        for (i, &v) in x.data().iter().enumerate() {
            let f = feature_of(i, inner, features);
            let d = v - mean[f];
            var[f] += d * d;
        }
        var.iter_mut().for_each(|s| *s /= m);

        let eps = T::of(BN_EPSILON);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (i, (h, o)) in xhat.data_mut().iter_mut().zip(y.data_mut()).enumerate() {
            let f = feature_of(i, inner, features);
            *h = (*h - mean[f]) * inv_std[f];
            *o = self.gamma.data()[f] * *h + self.beta.data()[f];
        }

        let mom = T::of(BN_MOMENTUM);
        let unbias = m / (m - T::one());
        for f in 0..features {
            let rm = &mut self.running_mean.data_mut()[f];
            *rm = mom * *rm + (T::one() - mom) * mean[f];
            let rv = &mut self.running_var.data_mut()[f];
            *rv = mom * *rv + (T::one() - mom) * var[f] * unbias;
        }
        self.cache = Some(BnCache { xhat, inv_std });
        Ok(y)
    }

    /// Exact batch-statistics gradient, including the paths through the
    /// batch mean and variance.
    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<BatchNormGrads<T>> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache("batchnorm"))?;
        if grad_out.shape() != cache.xhat.shape() {
            return Err(Error::dim("batchnorm_backward", grad_out.shape(), cache.xhat.shape()));
        }
        let features = self.features();
        let (count, inner) = layout(grad_out.shape(), features)?;
        let m = T::of(count as f64);
        let gamma = self.gamma.data();
        let mut g_gamma = vec![T::zero(); features];
        let mut g_beta = vec![T::zero(); features];
        for (i, (&g, &h)) in grad_out.data().iter().zip(cache.xhat.data()).enumerate() {
            let f = feature_of(i, inner, features);
            g_beta[f] += g;
            g_gamma[f] += g * h;
        }
        // Σ dxhat = γ·Σ dy and Σ dxhat·xhat = γ·Σ dy·xhat
        let mut gi = grad_out.clone();
        for (i, (v, &h)) in gi.data_mut().iter_mut().zip(cache.xhat.data()).enumerate() {
            let f = feature_of(i, inner, features);
            let dxhat = *v * gamma[f];
            *v = cache.inv_std[f] / m
                * (m * dxhat - gamma[f] * g_beta[f] - h * gamma[f] * g_gamma[f]);
        }
        Ok(BatchNormGrads {
            input: gi,
            gamma: Tensor::new(&[features], g_gamma)?,
            beta: Tensor::new(&[features], g_beta)?,
        })
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0))
    }

    fn projected_loss(bn: &BatchNorm<f64>, x: &Tensor<f64>, proj: &Tensor<f64>) -> f64 {
        let mut b = bn.clone();
        let y = b.forward_train(x).unwrap();
        y.data().iter().zip(proj.data()).map(|(a, p)| a * p).sum()
    }

    #[test]
    fn standardized_input_passes_through() {
        let x = Tensor::new(&[2, 1], vec![1.0f64, -1.0]).unwrap();
        let y = BatchNorm::new(1).forward_train(&x).unwrap();
        let shrink = 1.0 / (1.0 + BN_EPSILON).sqrt();
        assert!((y.data()[0] - shrink).abs() < 1e-12);
        assert!((y.data()[1] + shrink).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let mut bn = BatchNorm::<f64>::new(3);
        bn.gamma = Tensor::zeros(&[3]);
        bn.beta = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = bn.forward_train(&random(&[4, 3], 1)).unwrap();
        for row in y.data().chunks(3) {
            assert_eq!(row, bn.beta.data());
        }
    }

    #[test]
    fn normalized_statistics() {
        let mut bn = BatchNorm::<f64>::new(5);
        let x = random(&[64, 5], 2).map(|v| 3.0 * v + 7.0);
        let y = bn.forward_train(&x).unwrap();
        for f in 0..5 {
            let col: Vec<f64> = y.data().iter().skip(f).step_by(5).copied().collect();
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let mut bn = BatchNorm::<f32>::new(2);
        assert!(matches!(bn.forward_train(&Tensor::zeros(&[1, 2])), Err(Error::Config(_))));
    }

    #[test]
    fn zero_grad_out() {
        let mut bn = BatchNorm::<f64>::new(3);
        bn.forward_train(&random(&[4, 3], 3)).unwrap();
        let g = bn.backward(&Tensor::zeros(&[4, 3])).unwrap();
        assert!(g.input.data().iter().chain(g.gamma.data()).chain(g.beta.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn constant_batch_gradient_is_centered_and_scaled() {
        // With zero batch variance the normalizer is 1/√ε: the input gradient
        // is γ/√ε·(dy − mean(dy)), which vanishes only for a constant dy.
        let mut bn = BatchNorm::<f64>::new(1);
        bn.gamma = Tensor::full(&[1], 0.7);
        let x = Tensor::full(&[4, 1], 3.0);
        bn.forward_train(&x).unwrap();
        let dy = Tensor::new(&[4, 1], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let g = bn.backward(&dy).unwrap();
        let mean = dy.data().iter().sum::<f64>() / 4.0;
        let want: Vec<f64> = dy.data().iter().map(|d| 0.7 / BN_EPSILON.sqrt() * (d - mean)).collect();
        assert!(relative_error(g.input.data(), &want) < 1e-10);
        let numeric = central_difference(&x, 1e-7, |x| projected_loss(&BatchNorm { gamma: bn.gamma.clone(), ..BatchNorm::new(1) }, x, &dy));
        assert!(relative_error(g.input.data(), numeric.data()) < 1e-5);

        bn.forward_train(&x).unwrap();
        let flat = bn.backward(&Tensor::full(&[4, 1], 2.5)).unwrap();
        assert!(flat.input.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn finite_differences_dense_and_conv_layouts() {
        for shape in [vec![6, 3], vec![3, 2, 2, 3]] {
            let features = shape[1];
            let mut bn = BatchNorm::<f64>::new(features);
            bn.gamma = random(&[features], 4).map(|v| v + 2.5);
            bn.beta = random(&[features], 5);
            let x = random(&shape, 6);
            let proj = random(&shape, 7);
            let mut live = bn.clone();
            live.forward_train(&x).unwrap();
            let g = live.backward(&proj).unwrap();

            let nx = central_difference(&x, 1e-5, |x| projected_loss(&bn, x, &proj));
            let ng = central_difference(&bn.gamma, 1e-5, |gm| {
                projected_loss(&BatchNorm { gamma: gm.clone(), ..bn.clone() }, &x, &proj)
            });
            let nb = central_difference(&bn.beta, 1e-5, |bt| {
                projected_loss(&BatchNorm { beta: bt.clone(), ..bn.clone() }, &x, &proj)
            });
            assert!(relative_error(g.input.data(), nx.data()) < 1e-5);
            assert!(relative_error(g.gamma.data(), ng.data()) < 1e-5);
            assert!(relative_error(g.beta.data(), nb.data()) < 1e-5);
        }
    }

    #[test]
    fn running_statistics_move_toward_batch() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap();
        bn.forward_train(&x).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance 2, blended with the initial 1
        assert!((bn.running_var.data()[0] - 1.1).abs() < 1e-12);
        assert!(bn.running_var.data()[0] >= 0.0);
    }
}
