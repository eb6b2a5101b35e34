//! Adversarial-jamming regularization of autoencoder latent spaces.
//!
//! A data compressor doubles as a channel jammer against an auxiliary
//! joint source-channel coding (JSCC) autoencoder that transmits a standard
//! Gaussian source. The worst-case jammer of that game is isotropic Gaussian
//! noise, so playing it pushes the compressor's aggregated latent
//! distribution towards `N(0, I)`.
//!
//! Modules:
//! - [`tensor`]: f64 tensors, recorded graph, reverse-mode gradients, Adam.
//! - [`nets`]: MLPs for the four players and batch power normalization.
//! - [`game`]: channel, both training objectives and the alternating loop.
//! - [`baselines`]: VAE (KL) and WAE (IMQ-MMD) regularizers.
//! - [`oracle`]: closed-form and Monte-Carlo ground truth for the
//!   linear-Gaussian jamming game.
//! - [`metrics`]: MSE, Pearson-correlation determinant, Gaussianity stats.
//! - [`data`]: IDX loading, synthetic sources, batching.
//! - [`rng`]: portable seeded streams.

// NaN-rejecting `!(x >= 0.0)` checks and index loops in the LU code are deliberate
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod game;
pub mod metrics;
pub mod nets;
pub mod oracle;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
