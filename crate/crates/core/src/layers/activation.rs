use crate::error::{Error, Result};
use crate::tensor::{maxpool2, maxpool2_grad, Real, Tensor};

#[derive(Clone, Debug, Default)]
pub struct Relu<T: Real = f32> {
    input: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Relu { input: None }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        // NaN passes through so divergence stays visible.
        x.map(|v| if v < T::zero() { T::zero() } else { v })
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input = Some(x.clone());
        self.forward(x)
    }

    /// Passes the gradient where the cached input was strictly positive.
    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or(Error::MissingCache("relu"))?;
        if x.shape() != grad_out.shape() {
            return Err(Error::dim("relu_backward", grad_out.shape(), x.shape()));
        }
        let mut g = grad_out.clone();
        for (v, &xi) in g.data_mut().iter_mut().zip(x.data()) {
            if xi <= T::zero() {
                *v = T::zero();
            }
        }
        Ok(g)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[derive(Clone, Debug, Default)]
pub struct MaxPool<T: Real = f32> {
    cache: Option<(Vec<usize>, Vec<usize>)>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> MaxPool<T> {
    pub fn new() -> Self {
        MaxPool {
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(maxpool2(x)?.0)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, arg) = maxpool2(x)?;
        self.cache = Some((arg, x.shape().to_vec()));
        Ok(y)
    }

    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, shape) = self.cache.as_ref().ok_or(Error::MissingCache("maxpool"))?;
        maxpool2_grad(grad_out, arg, shape)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
