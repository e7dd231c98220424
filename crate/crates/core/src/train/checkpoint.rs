//! `.bcck` checkpoints, little-endian:
//!
//! ```text
//! magic "BCCK" | version u16 | config text (u32 length + UTF-8)
//! completed epochs u64 | completed steps u64
//! network | optimizer step u64 | per parameter: state tag u8 + tensors
//! best flag u8 [epoch u64, valid error f64, test error f64, network]
//! metrics rows u32 | per row: epoch u64, 5 × f64
//! ```
//!
//! A network is its input shape (rank u32, dims u32…) followed, layer by
//! layer, by the layer's tensors: dense and conv weight and bias, batch-norm
//! γ, β, running mean and running variance. Each tensor is rank u32, dims
//! u32… and f32 values. Every random stream is addressed by the seed in the
//! config plus the epoch and step counters, so these two counters are the
//! complete generator state.

use std::fs;
use std::path::Path;

use super::{EpochMetrics, RunMetrics, TrainConfig};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::network::Network;
use crate::optim::{Optimizer, ParamState};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BCCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// The network at the epoch of lowest validation error.
#[derive(Clone, Debug)]
pub struct Best {
    pub epoch: usize,
    pub valid_error: f64,
    pub test_error: f64,
    pub net: Network<f32>,
}

/// Complete training state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Current weights, from which training continues.
    pub net: Network<f32>,
    pub optimizer: Optimizer<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed minibatch updates.
    pub step: u64,
    pub best: Option<Best>,
    pub metrics: RunMetrics,
}

fn layer_tensors(layer: &Layer<f32>) -> Vec<&Tensor<f32>> {
    match layer {
        Layer::BatchNorm(b) => vec![&b.gamma, &b.beta, &b.running_mean, &b.running_var],
        other => other.params(),
    }
}

fn layer_tensors_mut(layer: &mut Layer<f32>) -> Vec<&mut Tensor<f32>> {
    match layer {
        Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var],
        other => other.params_mut(),
    }
}

fn write_network(w: &mut Writer, net: &Network<f32>) {
    w.u32(net.input_shape().len() as u32);
    for &d in net.input_shape() {
        w.u32(d as u32);
    }
    for layer in net.layers() {
        for t in layer_tensors(layer) {
            w.tensor(t);
        }
    }
}

fn read_network(r: &mut Reader, cfg: &TrainConfig) -> Result<Network<f32>> {
    let rank = r.u32("input rank")? as usize;
    if rank == 0 || rank > 3 {
        return Err(r.err("input rank"));
    }
    let input: Vec<usize> = (0..rank)
        .map(|_| r.u32("input dims").map(|d| d as usize))
        .collect::<Result<_>>()?;
    let mut net = Network::build(&input, &cfg.layers, cfg.binarize_output, 0)?;
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        for slot in layer_tensors_mut(layer) {
            let t = r.tensor(&format!("layer {i} tensor"))?;
            if t.shape() != slot.shape() {
                return Err(r.err(&format!("layer {i} tensor shape {:?}", t.shape())));
            }
            *slot = t;
        }
    }
    Ok(net)
}

impl Checkpoint {
    /// The model selected by validation error, or the current weights
    /// before any epoch has completed.
    pub fn model(&self) -> &Network<f32> {
        self.best.as_ref().map_or(&self.net, |b| &b.net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        w.str(&self.config.to_text());
        w.u64(self.epoch as u64);
        w.u64(self.step);
        write_network(&mut w, &self.net);
        w.u64(self.optimizer.step);
        for layer in &self.optimizer.state {
            for p in layer {
                match p {
                    ParamState::Plain => w.u8(0),
                    ParamState::Velocity(v) => {
                        w.u8(1);
                        w.tensor(v);
                    }
                    ParamState::Moments { m, v } => {
                        w.u8(2);
                        w.tensor(m);
                        w.tensor(v);
                    }
                }
            }
        }
        match &self.best {
            None => w.u8(0),
            Some(b) => {
                w.u8(1);
                w.u64(b.epoch as u64);
                w.f64(b.valid_error);
                w.f64(b.test_error);
                write_network(&mut w, &b.net);
            }
        }
        w.u32(self.metrics.epochs.len() as u32);
        for e in &self.metrics.epochs {
            w.u64(e.epoch as u64);
            for v in [e.train_cost, e.valid_error, e.test_error, e.learning_rate, e.wall_seconds] {
                w.f64(v);
            }
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8], path: Option<&Path>) -> Result<Self> {
        let mut r = Reader::new(data, path);
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(r.err("magic"));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err(&format!("version ({version}, expected {CHECKPOINT_VERSION})")));
        }
        let config = TrainConfig::parse(&r.str("config")?)?;
        let epoch = r.u64("epoch")? as usize;
        let step = r.u64("step")?;
        let net = read_network(&mut r, &config)?;

        let mut optimizer = Optimizer::new(config.optimizer, config.hyper, config.lr_scaling, &net);
        optimizer.step = r.u64("optimizer step")?;
        for (li, layer) in optimizer.state.iter_mut().enumerate() {
            for (pi, p) in layer.iter_mut().enumerate() {
                let field = format!("optimizer state {li}.{pi}");
                let tag = r.u8(&field)?;
                let read_like = |r: &mut Reader, like: &Tensor<f32>| -> Result<Tensor<f32>> {
                    let t = r.tensor(&field)?;
                    if t.shape() != like.shape() {
                        return Err(r.err(&field));
                    }
                    Ok(t)
                };
                match (tag, &mut *p) {
                    (0, ParamState::Plain) => {}
                    (1, ParamState::Velocity(v)) => *v = read_like(&mut r, v)?,
                    (2, ParamState::Moments { m, v }) => {
                        *m = read_like(&mut r, m)?;
                        *v = read_like(&mut r, v)?;
                    }
                    _ => return Err(r.err(&field)),
                }
            }
        }

        let best = match r.u8("best flag")? {
            0 => None,
            1 => Some(Best {
                epoch: r.u64("best epoch")? as usize,
                valid_error: r.f64("best valid error")?,
                test_error: r.f64("best test error")?,
                net: read_network(&mut r, &config)?,
            }),
            _ => return Err(r.err("best flag")),
        };
        let rows = r.u32("metrics rows")? as usize;
        let mut metrics = RunMetrics::default();
        for _ in 0..rows {
            metrics.epochs.push(EpochMetrics {
                epoch: r.u64("metrics epoch")? as usize,
                train_cost: r.f64("metrics")?,
                valid_error: r.f64("metrics")?,
                test_error: r.f64("metrics")?,
                learning_rate: r.f64("metrics")?,
                wall_seconds: r.f64("metrics")?,
            });
        }
        r.expect_end()?;
        Ok(Checkpoint {
            config,
            net,
            optimizer,
            epoch,
            step,
            best,
            metrics,
        })
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
