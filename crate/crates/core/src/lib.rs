//! A self-contained laboratory for variational autoencoders on MNIST.
//!
//! Everything numeric is built in this crate: a define-by-run reverse-mode
//! autodiff tape, dense and convolutional layers, the Adam optimizer, and
//! the evaluation stack (Frechet distance between Gaussian summaries,
//! chi-squared tail probabilities, a small digit classifier). On top of
//! those sit the training loop, the latent-resampling augmentation scheme,
//! and file formats for checkpoints, run histories, and image grids.

pub mod augment;
pub mod conv;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod vae;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
