//! Stochastic resetting for SGD under label noise.
//!
//! The crate is split along the lines of the method:
//!
//! * [`nn`] — dense tensors, layer-wise reverse-mode differentiation and the
//!   small FCN / CNN / VCNN architectures with cross-entropy and MAE losses.
//! * [`data`] — synthetic and CIFAR-binary datasets, symmetric / asymmetric
//!   label corruption, stratified splits and i.i.d. minibatch sampling.
//! * [`train`] — plain and momentum SGD plus the resetting controller
//!   (checkpoint arming, re-pointing, partial and perturbed resets).
//! * [`diag`] — correct/wrong drift decomposition, cosine similarities and the
//!   SGD diffusion-scale estimator.
//! * [`langevin`] — 1D drift-diffusion with Poissonian resetting: Monte Carlo
//!   first-passage sampling, closed forms, Péclet criterion and the optimal
//!   reset rate.

pub mod data;
pub mod diag;
pub mod error;
pub mod langevin;
pub mod nn;
pub mod par;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
