use crate::binarize::{clip_unit_in_place, BinarizationMode, Domain, RngStream};
use crate::error::{Error, Result};
use crate::init::{glorot_uniform, InitCoefficient};
use crate::layers::{BatchNorm, Conv, Dense, Layer, LayerSpec, MaxPool, ParamKind, Relu};
use crate::tensor::{Real, Tensor, KERNEL, KERNEL_AREA};

/// Addresses the random stream a forward pass binarizes with: layer `i`
/// draws from `RngStream::keyed(seed, domain, i, counter)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub domain: Domain,
    pub counter: u64,
}

impl StreamKey {
    pub fn training(seed: u64, step: u64) -> Self {
        StreamKey {
            seed,
            domain: Domain::Binarize,
            counter: step,
        }
    }

    fn stream(&self, layer: usize) -> RngStream {
        RngStream::keyed(self.seed, self.domain, layer as u32, self.counter)
    }
}

/// A feed-forward stack of layers plus the architecture it was built from.
#[derive(Clone, Debug)]
pub struct Network<T: Real = f32> {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    binarize_output: bool,
}

impl<T: Real> Network<T> {
    /// Builds and Glorot-initializes a network for per-sample inputs of
    /// `input_shape` (`[C, H, W]` or `[D]`).
    pub fn build(input_shape: &[usize], specs: &[LayerSpec], binarize_output: bool, seed: u64) -> Result<Self> {
        let mut layers = Vec::new();
        let mut shape = input_shape.to_vec();
        for spec in specs {
            let idx = layers.len();
            let init = |fan_in: usize, fan_out: usize, wshape: &[usize]| {
                let mut rng = RngStream::keyed(seed, Domain::Init, idx as u32, 0);
                let mut w = glorot_uniform::<T>(fan_in, fan_out, wshape, &mut rng);
                if InitCoefficient::new(fan_in, fan_out).value() > 1.0 {
                    clip_unit_in_place(&mut w);
                }
                w
            };
            match *spec {
                LayerSpec::Dense { units } | LayerSpec::SvmOutput { classes: units } => {
                    let d_in: usize = shape.iter().product();
                    let w = init(d_in, units, &[d_in, units]);
                    let output = matches!(spec, LayerSpec::SvmOutput { .. });
                    layers.push(Layer::Dense(Dense::new(w, Tensor::zeros(&[units]), output)?));
                    shape = vec![units];
                    if output {
                        layers.push(Layer::BatchNorm(BatchNorm::new(units)));
                    }
                }
                LayerSpec::Conv3x3 { filters } => {
                    let &[c, h, w] = &shape[..] else {
                        return Err(Error::Config(format!(
                            "conv layer needs a C×H×W input, got {shape:?}"
                        )));
                    };
                    let k = init(c * KERNEL_AREA, filters * KERNEL_AREA, &[filters, c, KERNEL, KERNEL]);
                    layers.push(Layer::Conv(Conv::new(k, Tensor::zeros(&[filters]))?));
                    shape = vec![filters, h, w];
                }
                LayerSpec::BatchNorm => layers.push(Layer::BatchNorm(BatchNorm::new(shape[0]))),
                LayerSpec::Relu => layers.push(Layer::Relu(Relu::new())),
                LayerSpec::MaxPool2 => {
                    match shape[..] {
                        [c, h, w] if h % 2 == 0 && w % 2 == 0 => shape = vec![c, h / 2, w / 2],
                        _ => {
                            return Err(Error::Config(format!(
                                "max pooling needs a C×H×W input with even H and W, got {shape:?}"
                            )))
                        }
                    }
                    layers.push(Layer::MaxPool(MaxPool::new()));
                }
            }
        }
        match layers.iter().rev().nth(1) {
            Some(Layer::Dense(d)) if d.output => {}
            _ => return Err(Error::Config("architecture must end with an svm output layer".into())),
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            specs: specs.to_vec(),
            layers,
            binarize_output,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn binarize_output(&self) -> bool {
        self.binarize_output
    }

    pub fn classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense(d) => Some(d.d_out()),
                _ => None,
            })
            .unwrap_or(0)
    }

    /// Effective binarization of layer `i` under `mode`.
    pub fn layer_mode(&self, i: usize, mode: BinarizationMode) -> BinarizationMode {
        match &self.layers[i] {
            Layer::Dense(d) if d.output && !self.binarize_output => BinarizationMode::Off,
            _ => mode,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            let mut want = vec![0];
            want.extend_from_slice(&self.input_shape);
            return Err(Error::dim("network input", x.shape(), &want));
        }
        Ok(())
    }

    /// Training-phase forward pass. Each weight layer draws a fresh `w_b`
    /// from the stream keyed by `(seed, layer, step)` and caches it for
    /// [`Network::backward`]. Batch norm normalizes with batch statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>, mode: BinarizationMode, key: StreamKey) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for i in 0..self.layers.len() {
            let m = self.layer_mode(i, mode);
            let mut rng = key.stream(i);
            a = self.layers[i].forward_train(&a, m, &mut rng)?;
        }
        Ok(a)
    }

    /// Inference-phase forward pass; touches no caches.
    pub fn forward(&self, x: &Tensor<T>, mode: BinarizationMode, key: StreamKey) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut rng = key.stream(i);
            a = layer.forward(&a, self.layer_mode(i, mode), &mut rng)?;
        }
        Ok(a)
    }

    /// Index of the first layer whose inference-phase output contains a
    /// non-finite value.
    pub fn first_non_finite_layer(&self, x: &Tensor<T>, mode: BinarizationMode, key: StreamKey) -> Option<usize> {
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut rng = key.stream(i);
            a = layer.forward(&a, self.layer_mode(i, mode), &mut rng).ok()?;
            if !a.all_finite() {
                return Some(i);
            }
        }
        None
    }

    /// Back-propagates `grad_out` through the cached training-phase forward.
    /// Returns per-layer parameter gradients aligned with
    /// [`Layer::params`].
    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<Vec<Vec<Tensor<T>>>> {
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let (gi, pg) = self.layers[i].backward(&g, i > 0)?;
            grads[i] = pg;
            if let Some(gi) = gi {
                g = gi;
            }
        }
        Ok(grads)
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Parameter kinds for every layer, aligned with [`Layer::params`].
    pub fn param_kinds(&self) -> Vec<Vec<ParamKind>> {
        self.layers.iter().map(Layer::param_kinds).collect()
    }

    /// Largest `|w|` over all binarizable weight tensors.
    pub fn max_abs_weight(&self) -> T {
        self.layers
            .iter()
            .filter_map(Layer::weight)
            .fold(T::zero(), |m, w| m.max(w.max_abs()))
    }

    /// Same network in another precision, without caches.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => Layer::Dense(Dense::new(d.weight.cast(), d.bias.cast(), d.output).expect("valid shapes")),
                Layer::Conv(c) => Layer::Conv(Conv::new(c.kernels.cast(), c.bias.cast()).expect("valid shapes")),
                Layer::BatchNorm(b) => {
                    let mut nb = BatchNorm::new(b.features());
                    nb.gamma = b.gamma.cast();
                    nb.beta = b.beta.cast();
                    nb.running_mean = b.running_mean.cast();
                    nb.running_var = b.running_var.cast();
                    Layer::BatchNorm(nb)
                }
                Layer::Relu(_) => Layer::Relu(Relu::new()),
                Layer::MaxPool(_) => Layer::MaxPool(MaxPool::new()),
            })
            .collect();
        Network {
            input_shape: self.input_shape.clone(),
            specs: self.specs.clone(),
            layers,
            binarize_output: self.binarize_output,
        }
    }
}
