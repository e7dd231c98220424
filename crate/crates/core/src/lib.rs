//! Neural networks whose weights are binarized to ±1 during the forward and
//! backward passes, while the optimizer accumulates updates in real-valued
//! weights clipped to `[-1, 1]`.
//!
//! [`network::Network`] stacks dense, conv, batch-norm, ReLU and max-pool
//! layers under an L2-SVM output. [`train::Trainer`] runs the training loop
//! with deterministic, stochastic or no binarization. [`packed::PackedModel`]
//! stores a trained network as sign bitmaps and evaluates it with additions
//! and subtractions only.
//!
//! ```
//! use binaryconnect::binarize::{binarize_det, clip_unit};
//! use binaryconnect::tensor::Tensor;
//!
//! let w = Tensor::new(&[4], vec![-1.7f32, -0.2, 0.0, 0.6]).unwrap();
//! assert_eq!(binarize_det(&w).data(), &[-1.0, -1.0, 1.0, 1.0]);
//! assert_eq!(clip_unit(&w).data(), &[-1.0, -0.2, 0.0, 0.6]);
//! ```
//!
//! The guide in `book/` covers each part with runnable examples.

pub mod binarize;
mod codec;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod init;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod packed;
pub mod selftest;
pub mod tensor;
pub mod train;
