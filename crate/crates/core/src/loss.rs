//! Multi-class L2-SVM (squared hinge) loss with one-vs-rest ±1 targets.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Labels encoded one-vs-rest: `+1` at the true class, `−1` elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetEncoding<T: Real = f32> {
    targets: Tensor<T>,
}

impl<T: Real> TargetEncoding<T> {
    pub fn from_labels(labels: &[u8], classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Argument(format!("need at least 2 classes, got {classes}")));
        }
        let mut t = vec![-T::one(); labels.len() * classes];
        for (n, &l) in labels.iter().enumerate() {
            let l = l as usize;
            if l >= classes {
                return Err(Error::Argument(format!("label {l} out of range for {classes} classes")));
            }
            t[n * classes + l] = T::one();
        }
        Ok(TargetEncoding {
            targets: Tensor::new(&[labels.len(), classes], t)?,
        })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.targets
    }
}

/// `cost = (1/N)·Σ max(0, 1 − t·o)²` and its gradient with respect to the
/// outputs, `(1/N)·(−2t)·max(0, 1 − t·o)`.
pub fn squared_hinge<T: Real>(outputs: &Tensor<T>, targets: &TargetEncoding<T>) -> Result<(T, Tensor<T>)> {
    let t = targets.tensor();
    if outputs.shape() != t.shape() || outputs.shape().len() != 2 {
        return Err(Error::dim("squared_hinge", outputs.shape(), t.shape()));
    }
    let n = T::of(outputs.shape()[0] as f64);
    let two = T::of(2.0);
    let mut cost = T::zero();
    let mut grad = Tensor::zeros(outputs.shape());
    for ((g, &o), &tv) in grad.data_mut().iter_mut().zip(outputs.data()).zip(t.data()) {
        let m = T::one() - tv * o;
        let margin = if m < T::zero() { T::zero() } else { m };
        cost += margin * margin;
        *g = -two * tv * margin / n;
    }
    Ok((cost / n, grad))
}

/// Index of the highest score; the lowest index wins ties.
pub fn argmax<T: Real>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Per-row predictions of an `N × K` score matrix.
pub fn predict<T: Real>(scores: &Tensor<T>) -> Vec<usize> {
    let k = scores.shape().get(1).copied().unwrap_or(1).max(1);
    scores.data().chunks(k).map(argmax).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn satisfied_margins_cost_nothing() {
        let t = TargetEncoding::<f32>::from_labels(&[0, 1], 2).unwrap();
        let o = Tensor::new(&[2, 2], vec![1.5, -1.0, -3.0, 1.0]).unwrap();
        let (c, g) = squared_hinge(&o, &t).unwrap();
        assert_eq!(c, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_case() {
        let t = TargetEncoding::<f64>::from_labels(&[0], 2).unwrap();
        let (c, g) = squared_hinge(&Tensor::zeros(&[1, 2]), &t).unwrap();
        assert_eq!(c, 2.0);
        assert_eq!(g.data(), &[-2.0, 2.0]);
    }

    #[test]
    fn shape_errors() {
        let t = TargetEncoding::<f32>::from_labels(&[0, 1], 3).unwrap();
        assert!(squared_hinge(&Tensor::zeros(&[2, 2]), &t).is_err());
        assert!(TargetEncoding::<f32>::from_labels(&[3], 3).is_err());
        assert!(TargetEncoding::<f32>::from_labels(&[0], 1).is_err());
    }

    #[test]
    fn finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<u8> = (0..5).map(|_| rng.random_range(0..10)).collect();
        let t = TargetEncoding::<f64>::from_labels(&labels, 10).unwrap();
        let o = Tensor::from_fn(&[5, 10], |_| rng.random_range(-2.0..2.0));
        let (_, g) = squared_hinge(&o, &t).unwrap();
        let numeric = central_difference(&o, 1e-5, |o| squared_hinge(o, &t).unwrap().0);
        assert!(relative_error(g.data(), numeric.data()) < 1e-6);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f32; 4]), 0);
    }

    proptest! {
        #[test]
        fn cost_properties(vals in proptest::collection::vec(-3.0f64..3.0, 12), labels in proptest::collection::vec(0u8..4, 3)) {
            let o = Tensor::new(&[3, 4], vals).unwrap();
            let t = TargetEncoding::from_labels(&labels, 4).unwrap();
            let (c, g) = squared_hinge(&o, &t).unwrap();
            prop_assert!(c >= 0.0);
            for ((&gv, &ov), &tv) in g.data().iter().zip(o.data()).zip(t.tensor().data()) {
                prop_assert_eq!(gv == 0.0, tv * ov >= 1.0);
            }
            // reorder samples
            let perm = [2usize, 0, 1];
            let o2 = Tensor::from_fn(&[3, 4], |i| o.data()[perm[i / 4] * 4 + i % 4]);
            let l2: Vec<u8> = perm.iter().map(|&p| labels[p]).collect();
            let (c2, _) = squared_hinge(&o2, &TargetEncoding::from_labels(&l2, 4).unwrap()).unwrap();
            prop_assert!((c - c2).abs() < 1e-12);
        }
    }
}
