use crate::binarize::{binarize, BinarizationMode, RngStream};
use crate::error::{Error, Result};
use crate::tensor::{conv2d_same, conv2d_same_grad_input, conv2d_same_grad_kernels, Real, Tensor};

/// 3×3 "same" convolution with `F × C × 3 × 3` kernels.
#[derive(Clone, Debug)]
pub struct Conv<T: Real = f32> {
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
    cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct ConvCache<T: Real> {
    input: Tensor<T>,
    wb: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T: Real> {
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Conv<T> {
    pub fn new(kernels: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [f, _, kh, kw] = kernels.dims4("Conv::new")?;
        if kh != 3 || kw != 3 || bias.len() != f {
            return Err(Error::dim("Conv::new", kernels.shape(), bias.shape()));
        }
        Ok(Conv {
            kernels,
            bias,
            cache: None,
        })
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn forward_train(
        &mut self,
        x: &Tensor<T>,
        mode: BinarizationMode,
        rng: &mut RngStream,
    ) -> Result<Tensor<T>> {
        let wb = binarize(&self.kernels, mode, rng);
        let y = conv2d_same(x, &wb, &self.bias)?;
        self.cache = Some(ConvCache {
            input: x.clone(),
            wb,
        });
        Ok(y)
    }

    pub fn forward(&self, x: &Tensor<T>, mode: BinarizationMode, rng: &mut RngStream) -> Result<Tensor<T>> {
        conv2d_same(x, &binarize(&self.kernels, mode, rng), &self.bias)
    }

    pub fn backward(&self, grad_out: &Tensor<T>, need_input: bool) -> Result<ConvGrads<T>> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache("conv"))?;
        let [n, f, h, w] = grad_out.dims4("conv_backward")?;
        let plane = h * w;
        let input = if need_input {
            Some(conv2d_same_grad_input(grad_out, &cache.wb)?)
        } else {
            None
        };
        let kernels = conv2d_same_grad_kernels(&cache.input, grad_out)?;
        let mut bias = vec![T::zero(); f];
        for s in 0..n {
            for (fi, b) in bias.iter_mut().enumerate() {
                for &g in &grad_out.data()[(s * f + fi) * plane..(s * f + fi + 1) * plane] {
                    *b += g;
                }
            }
        }
        Ok(ConvGrads {
            input,
            kernels,
            bias: Tensor::new(&[f], bias)?,
        })
    }

    pub fn cached_binary_weight(&self) -> Option<&Tensor<T>> {
        self.cache.as_ref().map(|c| &c.wb)
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
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_kernels() {
        let mut c = Conv::new(Tensor::<f64>::zeros(&[2, 1, 3, 3]), Tensor::zeros(&[2])).unwrap();
        let y = c
            .forward_train(&random(&[1, 1, 4, 4], 1), BinarizationMode::Off, &mut RngStream::new(0))
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let g = c.backward(&Tensor::zeros(y.shape()), true).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.kernels.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_kernel_is_identity_both_ways() {
        let delta = Tensor::from_fn(&[1, 1, 3, 3], |i| if i == 4 { 1.0 } else { 0.0 });
        let mut c = Conv::new(delta, Tensor::zeros(&[1])).unwrap();
        let x = random(&[2, 1, 5, 5], 2);
        let y = c.forward_train(&x, BinarizationMode::Off, &mut RngStream::new(0)).unwrap();
        assert_eq!(y, x);
        let g = random(&[2, 1, 5, 5], 3);
        assert_eq!(c.backward(&g, true).unwrap().input.unwrap(), g);
    }

    #[test]
    fn finite_differences() {
        let x = random(&[2, 2, 4, 5], 4);
        let k = random(&[3, 2, 3, 3], 5);
        let b = random(&[3], 6);
        let proj = random(&[2, 3, 4, 5], 7);
        let loss = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| {
            let c = Conv::new(k.clone(), b.clone()).unwrap();
            let y = c.forward(x, BinarizationMode::Off, &mut RngStream::new(0)).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, p)| a * p).sum::<f64>()
        };
        let mut c = Conv::new(k.clone(), b.clone()).unwrap();
        c.forward_train(&x, BinarizationMode::Off, &mut RngStream::new(0)).unwrap();
        let g = c.backward(&proj, true).unwrap();
        assert!(relative_error(g.kernels.data(), central_difference(&k, 1e-5, |k| loss(&x, k, &b)).data()) < 1e-5);
        assert!(relative_error(g.input.unwrap().data(), central_difference(&x, 1e-5, |x| loss(x, &k, &b)).data()) < 1e-5);
        assert!(relative_error(g.bias.data(), central_difference(&b, 1e-5, |b| loss(&x, &k, b)).data()) < 1e-5);
    }

    #[test]
    fn missing_cache() {
        let c = Conv::new(Tensor::<f32>::zeros(&[1, 1, 3, 3]), Tensor::zeros(&[1])).unwrap();
        assert!(matches!(c.backward(&Tensor::zeros(&[1, 1, 2, 2]), true), Err(Error::MissingCache(_))));
    }
}
