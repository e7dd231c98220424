use crate::binarize::{binarize, BinarizationMode, RngStream};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

/// Fully connected layer. Weights are stored `d_in × d_out`; activations are
/// row-major batches. Inputs with more than two dimensions are flattened
/// per sample.
#[derive(Clone, Debug)]
pub struct Dense<T: Real = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    /// The terminal scoring layer; its binarization can be switched off.
    pub output: bool,
    cache: Option<DenseCache<T>>,
}

#[derive(Clone, Debug)]
struct DenseCache<T: Real> {
    input: Tensor<T>,
    input_shape: Vec<usize>,
    wb: Tensor<T>,
}

/// Gradients of a dense layer. `weight` is `∂C/∂w_b`; the optimizer applies
/// it to the real-valued weights.
#[derive(Clone, Debug)]
pub struct DenseGrads<T: Real> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, output: bool) -> Result<Self> {
        let [_, d_out] = weight.dims2("Dense::new")?;
        if bias.len() != d_out {
            return Err(Error::dim("Dense::new", weight.shape(), bias.shape()));
        }
        Ok(Dense {
            weight,
            bias,
            output,
            cache: None,
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    fn flatten(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = x.as_matrix_dims();
        if d != self.d_in() || x.shape().len() < 2 {
            return Err(Error::dim("dense_forward", x.shape(), self.weight.shape()));
        }
        x.clone().reshape(&[n, d])
    }

    fn affine(&self, x: &Tensor<T>, wb: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = matmul(x, wb)?;
        let b = self.bias.data();
        for row in y.data_mut().chunks_mut(b.len()) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(y)
    }

    /// Training-phase forward: draws `w_b`, returns `x·w_b + b` and caches
    /// `x` and `w_b` for [`Dense::backward`].
    pub fn forward_train(
        &mut self,
        x: &Tensor<T>,
        mode: BinarizationMode,
        rng: &mut RngStream,
    ) -> Result<Tensor<T>> {
        let flat = self.flatten(x)?;
        let wb = binarize(&self.weight, mode, rng);
        let y = self.affine(&flat, &wb)?;
        self.cache = Some(DenseCache {
            input: flat,
            input_shape: x.shape().to_vec(),
            wb,
        });
        Ok(y)
    }

    /// Cache-free forward for inference.
    pub fn forward(&self, x: &Tensor<T>, mode: BinarizationMode, rng: &mut RngStream) -> Result<Tensor<T>> {
        let flat = self.flatten(x)?;
        let wb = binarize(&self.weight, mode, rng);
        self.affine(&flat, &wb)
    }

    /// `grad_in = grad_out·w_bᵀ`, `grad_w = xᵀ·grad_out`, `grad_b = Σ_n grad_out`.
    pub fn backward(&self, grad_out: &Tensor<T>, need_input: bool) -> Result<DenseGrads<T>> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache("dense"))?;
        let [n, d_out] = grad_out.dims2("dense_backward")?;
        if d_out != self.d_out() || n != cache.input.shape()[0] {
            return Err(Error::dim("dense_backward", grad_out.shape(), cache.input.shape()));
        }
        let input = if need_input {
            let gi = matmul(grad_out, &cache.wb.transpose()?)?;
            Some(gi.reshape(&cache.input_shape)?)
        } else {
            None
        };
        let weight = matmul(&cache.input.transpose()?, grad_out)?;
        let mut bias = vec![T::zero(); d_out];
        for row in grad_out.data().chunks(d_out) {
            for (b, &g) in bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        Ok(DenseGrads {
            input,
            weight,
            bias: Tensor::new(&[d_out], bias)?,
        })
    }

    /// The `w_b` drawn by the last training-phase forward.
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
    use crate::binarize::sign;
    use crate::gradcheck::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| T::of(rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn off_mode_identity() {
        let mut d = Dense::new(Tensor::<f32>::eye(3), Tensor::zeros(&[3]), false).unwrap();
        let x = random::<f32>(&[4, 3], 1);
        let y = d.forward_train(&x, BinarizationMode::Off, &mut RngStream::new(0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn deterministic_signs() {
        let w = Tensor::new(&[1, 2], vec![0.3f32, -0.2]).unwrap();
        let d = Dense::new(w, Tensor::zeros(&[2]), false).unwrap();
        let y = d
            .forward(&Tensor::full(&[1, 1], 1.0), BinarizationMode::Deterministic, &mut RngStream::new(0))
            .unwrap();
        assert_eq!(y.data(), &[1.0, -1.0]);
    }

    #[test]
    fn deterministic_matches_sign_oracle() {
        let x = random::<f32>(&[4, 8], 2);
        let w = random::<f32>(&[8, 5], 3);
        let b = random::<f32>(&[5], 4);
        let d = Dense::new(w.clone(), b.clone(), false).unwrap();
        let y = d.forward(&x, BinarizationMode::Deterministic, &mut RngStream::new(0)).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut acc = 0.0f32;
                for t in 0..8 {
                    acc += x.data()[i * 8 + t] * sign(w.data()[t * 5 + j]);
                }
                assert_eq!(y.data()[i * 5 + j], acc + b.data()[j]);
            }
        }
    }

    #[test]
    fn scalar_chain_rule() {
        let mut d = Dense::new(Tensor::full(&[1, 1], 0.5f32), Tensor::zeros(&[1]), false).unwrap();
        d.forward_train(&Tensor::full(&[1, 1], 2.0), BinarizationMode::Deterministic, &mut RngStream::new(0))
            .unwrap();
        let g = d.backward(&Tensor::full(&[1, 1], 3.0), true).unwrap();
        assert_eq!(g.input.unwrap().data(), &[3.0]);
        assert_eq!(g.weight.data(), &[6.0]);
        assert_eq!(g.bias.data(), &[3.0]);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut d = Dense::new(random::<f32>(&[3, 2], 5), random(&[2], 6), false).unwrap();
        d.forward_train(&random(&[4, 3], 7), BinarizationMode::Stochastic, &mut RngStream::new(1))
            .unwrap();
        let g = d.backward(&Tensor::zeros(&[4, 2]), true).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let d = Dense::new(Tensor::<f32>::eye(2), Tensor::zeros(&[2]), false).unwrap();
        assert!(matches!(d.backward(&Tensor::zeros(&[1, 2]), true), Err(Error::MissingCache(_))));
    }

    #[test]
    fn backward_uses_cached_binary_weights() {
        let mut d = Dense::new(random::<f32>(&[6, 4], 8), Tensor::zeros(&[4]), false).unwrap();
        d.forward_train(&random(&[3, 6], 9), BinarizationMode::Stochastic, &mut RngStream::new(2))
            .unwrap();
        let wb = d.cached_binary_weight().unwrap().clone();
        let g = random::<f32>(&[3, 4], 10);
        let gi = d.backward(&g, true).unwrap().input.unwrap();
        assert_eq!(gi, matmul(&g, &wb.transpose().unwrap()).unwrap());
    }

    #[test]
    fn deterministic_output_is_scale_free() {
        let x = random::<f32>(&[3, 5], 11);
        let w = random::<f32>(&[5, 4], 12);
        let a = Dense::new(w.clone(), Tensor::zeros(&[4]), false).unwrap();
        let b = Dense::new(w.map(|v| v * 0.37), Tensor::zeros(&[4]), false).unwrap();
        let mut rng = RngStream::new(0);
        assert_eq!(
            a.forward(&x, BinarizationMode::Deterministic, &mut rng).unwrap(),
            b.forward(&x, BinarizationMode::Deterministic, &mut rng).unwrap()
        );
    }

    #[test]
    fn finite_difference_weights_and_input() {
        let x = random::<f64>(&[3, 4], 13);
        let w = random::<f64>(&[4, 2], 14);
        let b = random::<f64>(&[2], 15);
        let proj = random::<f64>(&[3, 2], 16);
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            let d = Dense::new(w.clone(), b.clone(), false).unwrap();
            let y = d.forward(x, BinarizationMode::Off, &mut RngStream::new(0)).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, p)| a * p).sum::<f64>()
        };
        let mut d = Dense::new(w.clone(), b.clone(), false).unwrap();
        d.forward_train(&x, BinarizationMode::Off, &mut RngStream::new(0)).unwrap();
        let g = d.backward(&proj, true).unwrap();
        let nw = central_difference(&w, 1e-5, |w| loss(&x, w, &b));
        let nx = central_difference(&x, 1e-5, |x| loss(x, &w, &b));
        let nb = central_difference(&b, 1e-5, |b| loss(&x, &w, b));
        assert!(relative_error(g.weight.data(), nw.data()) < 1e-5);
        assert!(relative_error(g.input.unwrap().data(), nx.data()) < 1e-5);
        assert!(relative_error(g.bias.data(), nb.data()) < 1e-5);
    }
}
