//! The training loop: per-minibatch binarization, propagation through the
//! same `w_b`, clipped updates of the real-valued weights, per-epoch
//! validation and model selection.

mod checkpoint;
mod config;
mod experiment;
mod histogram;
mod metrics;

pub use checkpoint::{Best, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DatasetKind, TrainConfig, PRESETS};
pub use experiment::{ablation, ablation_table, repeat, AblationCell, RepeatSummary, DESK_ABLATION_RATES};
pub use histogram::{histogram, histogram_csv, weight_histogram, HISTOGRAM_BINS};
pub use metrics::{EpochMetrics, RunMetrics};

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::binarize::{BinarizationMode, Domain, RngStream};
use crate::data::{gcn, load_cifar10, load_idx, split_train_valid, zca_fit, CifarSplit, Dataset};
use crate::error::{Error, Result};
use crate::inference::{error_rate, InferenceMode};
use crate::loss::{squared_hinge, TargetEncoding};
use crate::network::{Network, StreamKey};
use crate::optim::{LrSchedule, Optimizer};
use crate::packed::PackedModel;

/// Training, validation and test sets of one run.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn head(d: Dataset, n: usize) -> Dataset {
    if n > 0 && n < d.len() {
        d.slice(0, n)
    } else {
        d
    }
}

impl Splits {
    /// Loads the configured dataset, holds out the validation tail, takes
    /// the configured subsets and applies the configured preprocessing.
    /// ZCA is fitted on the training split only.
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let dir = &cfg.data_dir;
        let (full, test) = match cfg.dataset {
            DatasetKind::Mnist => {
                let [ti, tl, si, sl] = MNIST_FILES.map(|f| dir.join(f));
                (load_idx(ti, tl)?, load_idx(si, sl)?)
            }
            DatasetKind::Cifar10 => (load_cifar10(dir, CifarSplit::Train)?, load_cifar10(dir, CifarSplit::Test)?),
        };
        let (train, valid) = split_train_valid(&full, cfg.valid_count)?;
        drop(full);
        let mut s = Splits {
            train: head(train, cfg.train_subset),
            valid,
            test: head(test, cfg.test_subset),
        };
        if cfg.gcn {
            for d in [&mut s.train, &mut s.valid, &mut s.test] {
                d.images = gcn(&d.images);
            }
        }
        if cfg.zca {
            let sub = (cfg.zca_subsample > 0).then_some((cfg.zca_subsample, cfg.zca_seed));
            let t = zca_fit(&s.train.images, cfg.zca_epsilon, sub)?;
            for d in [&mut s.train, &mut s.valid, &mut s.test] {
                d.images = t.apply(&d.images)?;
            }
        }
        Ok(s)
    }
}

/// What an observer sees at each training step.
pub struct StepContext<'a> {
    pub epoch: usize,
    pub batch: usize,
    /// Global step index, also the counter of the binarization stream.
    pub step: u64,
    pub key: StreamKey,
    pub mode: BinarizationMode,
    pub net: &'a Network<f32>,
}

/// Instrumentation hooks. `after_backward` runs while the forward caches
/// (including each layer's `w_b`) are still populated, before the update.
pub trait StepObserver {
    fn after_backward(&mut self, _ctx: &StepContext) -> Result<()> {
        Ok(())
    }

    fn after_update(&mut self, _ctx: &StepContext) -> Result<()> {
        Ok(())
    }

    fn after_epoch(&mut self, _metrics: &EpochMetrics) {}
}

impl StepObserver for () {}

/// Drives a [`Checkpoint`] forward one epoch at a time.
pub struct Trainer<'a> {
    pub state: Checkpoint,
    data: &'a Splits,
    schedule: LrSchedule,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a Splits) -> Result<Self> {
        config.validate()?;
        let input = data.train.sample_shape().to_vec();
        let net = Network::build(&input, &config.layers, config.binarize_output, config.seed)?;
        let optimizer = Optimizer::new(config.optimizer, config.hyper, config.lr_scaling, &net);
        Self::resume(
            Checkpoint {
                config,
                net,
                optimizer,
                epoch: 0,
                step: 0,
                best: None,
                metrics: RunMetrics::default(),
            },
            data,
        )
    }

    pub fn resume(state: Checkpoint, data: &'a Splits) -> Result<Self> {
        let schedule = state.config.schedule()?;
        if data.train.len() < 2 {
            return Err(Error::Argument(format!(
                "training set has {} samples; at least 2 are needed",
                data.train.len()
            )));
        }
        Ok(Trainer { state, data, schedule })
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.state.config.epochs
    }

    /// Runs one epoch: a seeded reshuffle, one update per minibatch, then
    /// validation and test evaluation.
    pub fn run_epoch(&mut self, observer: &mut dyn StepObserver) -> Result<EpochMetrics> {
        let started = Instant::now();
        let st = &mut self.state;
        let cfg = &st.config;
        let epoch = st.epoch;
        let lr = self.schedule.lr_at(epoch)?;
        let mode = cfg.binarization;
        let train = &self.data.train;

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(RngStream::keyed(cfg.seed, Domain::Shuffle, 0, epoch as u64).rng_mut());

        let mut cost_sum = 0.0f64;
        let mut batches = 0usize;
        // A trailing minibatch of one sample cannot be batch-normalized and
        // is skipped.
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate().filter(|(_, c)| c.len() >= 2) {
            let (x, labels) = train.gather(idx);
            let targets = TargetEncoding::from_labels(&labels, train.classes)?;
            let key = StreamKey::training(cfg.seed, st.step);
            let out = st.net.forward_train(&x, mode, key)?;
            let (cost, grad) = squared_hinge(&out, &targets)?;
            if !cost.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch,
                    layer: st.net.first_non_finite_layer(&x, mode, key),
                });
            }
            let grads = st.net.backward(&grad)?;
            let step = st.step;
            observer.after_backward(&StepContext {
                epoch,
                batch,
                step,
                key,
                mode,
                net: &st.net,
            })?;
            st.optimizer.update(&mut st.net, &grads, lr)?;
            st.net.clear_caches();
            observer.after_update(&StepContext {
                epoch,
                batch,
                step,
                key,
                mode,
                net: &st.net,
            })?;
            st.step += 1;
            cost_sum += cost as f64;
            batches += 1;
        }

        let eval_mode = InferenceMode::for_training(mode);
        let valid_error = error_rate(&st.net, &self.data.valid, eval_mode)?;
        let test_error = error_rate(&st.net, &self.data.test, eval_mode)?;
        let row = EpochMetrics {
            epoch,
            train_cost: cost_sum / batches.max(1) as f64,
            valid_error,
            test_error,
            learning_rate: lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        let improved = match &st.best {
            Some(b) => valid_error < b.valid_error,
            None => true,
        };
        if improved {
            st.best = Some(Best {
                epoch,
                valid_error,
                test_error,
                net: st.net.clone(),
            });
        }
        st.metrics.epochs.push(row.clone());
        st.epoch += 1;
        observer.after_epoch(&row);
        Ok(row)
    }

    /// Trains until `epoch` epochs are complete (capped at the configured
    /// total).
    pub fn train_until(&mut self, epoch: usize, observer: &mut dyn StepObserver) -> Result<()> {
        while self.state.epoch < epoch.min(self.state.config.epochs) {
            self.run_epoch(observer)?;
        }
        Ok(())
    }

    pub fn train_all(&mut self, observer: &mut dyn StepObserver) -> Result<()> {
        self.train_until(self.state.config.epochs, observer)
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }
}

/// Loads the data and trains for the configured number of epochs.
pub fn train(config: TrainConfig) -> Result<(Checkpoint, RunMetrics)> {
    let data = Splits::load(&config)?;
    train_on(config, &data, &mut ())
}

/// Trains on already loaded data.
pub fn train_on(config: TrainConfig, data: &Splits, observer: &mut dyn StepObserver) -> Result<(Checkpoint, RunMetrics)> {
    let mut t = Trainer::new(config, data)?;
    t.train_all(observer)?;
    let ckpt = t.into_checkpoint();
    let metrics = ckpt.metrics.clone();
    Ok((ckpt, metrics))
}

/// Error rate of the checkpoint's selected model on `data`.
pub fn evaluate(checkpoint: &Checkpoint, data: &Dataset, mode: InferenceMode) -> Result<f64> {
    error_rate(checkpoint.model(), data, mode)
}

/// Packs the selected model with deterministic binarization and writes it
/// to `path`.
pub fn export_packed(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<PackedModel> {
    let packed = PackedModel::from_network(checkpoint.model())?;
    packed.save(path)?;
    Ok(packed)
}
