//! Built-in consistency checks: 64-bit finite-difference gradient checks for
//! every layer type and the loss, and bit-exactness of the packed kernels.

use std::fmt;

use crate::binarize::{binarize_det, BinarizationMode, RngStream};
use crate::gradcheck::{central_difference, relative_error};
use crate::layers::{parse_layers, BatchNorm, Conv, Dense, Layer, MaxPool, Relu};
use crate::loss::{squared_hinge, TargetEncoding};
use crate::network::{Network, StreamKey};
use crate::packed::{Bitmap, PackedLayer};
use crate::tensor::Tensor;

pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }

    fn gradient(&mut self, name: &str, worst: f64) {
        self.push(
            format!("gradient {name}"),
            worst < GRADIENT_TOLERANCE,
            format!("max relative error {worst:.2e}"),
        );
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail)?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

fn random(shape: &[usize], scale: f64, rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| (rng.uniform() as f64 * 2.0 - 1.0) * scale)
}

fn projected(layer: &mut Layer<f64>, x: &Tensor<f64>, proj: &Tensor<f64>) -> f64 {
    let y = layer
        .forward_train(x, BinarizationMode::Off, &mut RngStream::new(0))
        .expect("shapes fixed by the caller");
    y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
}

/// Largest relative error over the input and every parameter of `layer`,
/// for the scalar `Σ proj ⊙ layer(x)`.
pub fn check_layer(layer: &Layer<f64>, x: &Tensor<f64>, rng: &mut RngStream) -> f64 {
    let mut probe = layer.clone();
    let out = probe
        .forward_train(x, BinarizationMode::Off, &mut RngStream::new(0))
        .expect("shapes fixed by the caller");
    let proj = random(out.shape(), 1.0, rng);
    let (gx, gparams) = probe.backward(&proj, true).expect("cache present");

    let mut worst = relative_error(
        gx.expect("input gradient requested").data(),
        central_difference(x, GRADIENT_STEP, |x| projected(&mut layer.clone(), x, &proj)).data(),
    );
    for (p, g) in gparams.iter().enumerate() {
        let base = layer.params()[p].clone();
        let numeric = central_difference(&base, GRADIENT_STEP, |v| {
            let mut l = layer.clone();
            *l.params_mut()[p] = v.clone();
            projected(&mut l, x, &proj)
        });
        worst = worst.max(relative_error(g.data(), numeric.data()));
    }
    worst
}

fn loss_check(rng: &mut RngStream) -> f64 {
    let labels: Vec<u8> = (0..6).map(|i| (i * 3 % 5) as u8).collect();
    let targets = TargetEncoding::<f64>::from_labels(&labels, 5).unwrap();
    let outputs = random(&[6, 5], 2.0, rng);
    let (_, grad) = squared_hinge(&outputs, &targets).unwrap();
    let numeric = central_difference(&outputs, GRADIENT_STEP, |o| squared_hinge(o, &targets).unwrap().0);
    relative_error(grad.data(), numeric.data())
}

/// Whole network, loss included, with batch statistics in play.
fn network_check(rng: &mut RngStream) -> f64 {
    let specs = parse_layers("conv:3,bn,relu,pool,dense:7,bn,relu,svm:4").unwrap();
    let mut net = Network::<f32>::build(&[2, 4, 4], &specs, true, 11).unwrap().cast::<f64>();
    let x = random(&[5, 2, 4, 4], 1.0, rng);
    let labels = [0u8, 1, 2, 3, 1];
    let targets = TargetEncoding::<f64>::from_labels(&labels, 4).unwrap();
    let key = StreamKey::training(0, 0);
    let cost = |net: &mut Network<f64>| {
        let out = net.forward_train(&x, BinarizationMode::Off, key).unwrap();
        squared_hinge(&out, &targets).unwrap()
    };
    let (_, grad) = cost(&mut net);
    let analytic = net.backward(&grad).unwrap();
    let mut worst = 0.0f64;
    for li in 0..net.layers().len() {
        for pi in 0..net.layers()[li].params().len() {
            let base = net.layers()[li].params()[pi].clone();
            let numeric = central_difference(&base, GRADIENT_STEP, |v| {
                let mut probe = net.clone();
                *probe.layers_mut()[li].params_mut()[pi] = v.clone();
                cost(&mut probe).0
            });
            worst = worst.max(relative_error(analytic[li][pi].data(), numeric.data()));
        }
    }
    worst
}

/// Gradient checks in mode Off for dense, conv, batch norm, ReLU, max
/// pooling, the squared hinge loss and a small end-to-end network.
pub fn gradient_checks(seed: u64) -> Report {
    let mut rng = RngStream::new(seed);
    let mut report = Report::default();

    let dense = Layer::Dense(Dense::new(random(&[6, 4], 0.5, &mut rng), random(&[4], 0.5, &mut rng), false).unwrap());
    let x = random(&[3, 6], 1.0, &mut rng);
    report.gradient("dense", check_layer(&dense, &x, &mut rng));

    let conv = Layer::Conv(Conv::new(random(&[3, 2, 3, 3], 0.5, &mut rng), random(&[3], 0.5, &mut rng)).unwrap());
    let x = random(&[2, 2, 5, 4], 1.0, &mut rng);
    report.gradient("conv3x3", check_layer(&conv, &x, &mut rng));

    for (name, x) in [("batchnorm (dense)", random(&[5, 3], 1.0, &mut rng)), ("batchnorm (conv)", random(&[3, 3, 2, 2], 1.0, &mut rng))] {
        let mut bn = BatchNorm::new(3);
        bn.gamma = random(&[3], 1.0, &mut rng).map(|g| g + 1.5);
        bn.beta = random(&[3], 1.0, &mut rng);
        report.gradient(name, check_layer(&Layer::BatchNorm(bn), &x, &mut rng));
    }

    // Keep inputs away from the ReLU kink.
    let x = random(&[4, 5], 1.0, &mut rng).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    report.gradient("relu", check_layer(&Layer::Relu(Relu::new()), &x, &mut rng));

    let x = random(&[2, 2, 4, 6], 1.0, &mut rng);
    report.gradient("maxpool2", check_layer(&Layer::MaxPool(MaxPool::new()), &x, &mut rng));

    report.gradient("squared hinge", loss_check(&mut rng));
    report.gradient("network", network_check(&mut rng));
    report
}

fn random32(shape: &[usize], rng: &mut RngStream) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.uniform() * 4.0 - 2.0)
}

fn bit_equal(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// `cases` random dense and conv layers: the packed forward must equal the
/// unpacked forward on `sign(w)` bit for bit. Then pack/unpack round trips
/// for every width in `1..=129`.
pub fn packed_checks(seed: u64, cases: usize) -> Report {
    let mut rng = RngStream::new(seed);
    let mut report = Report::default();
    let dim = |lo: usize, hi: usize, rng: &mut RngStream| lo + (rng.uniform() * (hi - lo + 1) as f32) as usize % (hi - lo + 1);

    let (mut dense_ok, mut conv_ok) = (0, 0);
    let (mut dense_n, mut conv_n) = (0, 0);
    for case in 0..cases {
        if case % 2 == 0 {
            let (n, d_in, d_out) = (dim(1, 4, &mut rng), dim(1, 200, &mut rng), dim(1, 40, &mut rng));
            let w = random32(&[d_in, d_out], &mut rng);
            let b = random32(&[d_out], &mut rng);
            let x = random32(&[n, d_in], &mut rng);
            let want = Dense::new(w.clone(), b.clone(), false)
                .unwrap()
                .forward(&x, BinarizationMode::Deterministic, &mut rng)
                .unwrap();
            let got = PackedLayer::dense(&binarize_det(&w), b.into_data()).unwrap().forward(&x).unwrap();
            dense_n += 1;
            dense_ok += bit_equal(&got, &want) as usize;
        } else {
            let (n, c, f) = (dim(1, 3, &mut rng), dim(1, 8, &mut rng), dim(1, 8, &mut rng));
            let (h, w) = (dim(1, 9, &mut rng), dim(1, 9, &mut rng));
            let k = random32(&[f, c, 3, 3], &mut rng);
            let b = random32(&[f], &mut rng);
            let x = random32(&[n, c, h, w], &mut rng);
            let want = Conv::new(k.clone(), b.clone())
                .unwrap()
                .forward(&x, BinarizationMode::Deterministic, &mut rng)
                .unwrap();
            let got = PackedLayer::conv(&binarize_det(&k), b.into_data()).unwrap().forward(&x).unwrap();
            conv_n += 1;
            conv_ok += bit_equal(&got, &want) as usize;
        }
    }
    report.push("packed dense", dense_ok == dense_n, format!("{dense_ok}/{dense_n} bit-exact"));
    report.push("packed conv3x3", conv_ok == conv_n, format!("{conv_ok}/{conv_n} bit-exact"));

    let mut bad = Vec::new();
    for width in 1..=129 {
        let rows = dim(1, 3, &mut rng);
        let values: Vec<f32> = (0..rows * width).map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 }).collect();
        let ok = Bitmap::pack(&values, rows, width).map(|b| b.unpack() == values).unwrap_or(false);
        if !ok {
            bad.push(width);
        }
    }
    report.push(
        "bitmap round trip",
        bad.is_empty(),
        if bad.is_empty() { "widths 1..=129".to_string() } else { format!("failed widths {bad:?}") },
    );
    report
}

/// Everything the `selftest` subcommand runs.
pub fn run(seed: u64) -> Report {
    let mut report = gradient_checks(seed);
    report.checks.extend(packed_checks(seed, 50).checks);
    report
}
