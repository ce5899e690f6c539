//! Inferential Wasserstein GAN laboratory.
//!
//! An autoencoder-GAN whose encoder `Q`, generator `G` and critic `f` are
//! trained by alternating primal and dual updates, with the duality gap as the
//! stopping criterion. The crate carries its own reverse-mode autodiff (with
//! gradients of gradients for the critic's gradient penalty), the synthetic
//! Gaussian-mixture benchmarks, exact empirical transport and kernel metrics,
//! and analytic Rosenblatt transforms used as ground-truth encoder/generator
//! pairs.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;
