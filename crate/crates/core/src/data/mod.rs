//! Datasets: MNIST IDX and CIFAR-10 binary ingestion, global contrast
//! normalization, ZCA whitening and the file-order train/validation split.

mod cifar;
mod idx;
mod preprocess;

pub use cifar::{load_cifar10, load_cifar10_batch, write_cifar10_batch, CifarSplit, CIFAR_RECORD};
pub use idx::{load_idx, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use preprocess::{gcn, jacobi_eigen, zca_fit, ZcaTransform, GCN_EPSILON, ZCA_EPSILON};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `N × C × H × W` with pixel values in `[0, 1]` (before any
/// preprocessing) and one class id per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>, classes: usize) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::dim("Dataset::new", images.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Argument(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<f32>, Vec<u8>) {
        let d = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        (Tensor::new(&shape, data).expect("consistent shape"), labels)
    }

    /// Contiguous samples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let idx: Vec<usize> = (start..end).collect();
        let (images, labels) = self.gather(&idx);
        Dataset {
            images,
            labels,
            classes: self.classes,
        }
    }
}

/// Holds out the final `valid_count` samples, in file order, as the
/// validation set. Nothing is shuffled before the split.
pub fn split_train_valid(dataset: &Dataset, valid_count: usize) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if valid_count >= n && !(valid_count == 0 && n == 0) {
        return Err(Error::Argument(format!(
            "validation size {valid_count} must be smaller than the dataset ({n} samples)"
        )));
    }
    Ok((dataset.slice(0, n - valid_count), dataset.slice(n - valid_count, n)))
}
