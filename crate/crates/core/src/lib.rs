//! Proxy learning: quantify items with real-valued semantic attributes learned
//! only from class labels and a class-attribute relation matrix `G`.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: SVD, least squares, correlation.
//! - [`domain`]: vocabularies, datasets, ground truth and every file format.
//! - [`gmatrix`]: estimation of `G` and the fixed terminal maps `G*`.
//! - [`linear`]: sparse coding (LARS-lasso), ESZSL and the PCA proxy.
//! - [`nn`]: feedforward networks, backpropagation, momentum SGD, checkpoints.
//! - [`proxy`]: the deep-proxy and logistic attribute learners.
//! - [`eval`]: AUC, AUC@K, average precision, baselines and ranking tables.
//! - [`synth`]: synthetic worlds with known latent attributes.

pub mod domain;
pub mod error;
pub mod eval;
pub mod gmatrix;
pub mod linalg;
pub mod linear;
pub mod nn;
pub mod proxy;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use linalg::Matrix;
