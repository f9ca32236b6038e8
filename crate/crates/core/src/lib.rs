//! Semi-supervised training of a small convolutional classifier where unlabelled
//! samples are tied to labelled ones through a Gaussian kernel on exact
//! Wasserstein (earth mover's) distances between I/Q correlator images.
//!
//! The crate is organised bottom-up:
//!
//! - [`synth`]: seeded synthetic GNSS I/Q correlator images (LOS, multipath echo, noise).
//! - [`ot`]: pixel cost matrix, transportation-simplex EMD, pairwise distance cache, kernel weights.
//! - [`nn`]: the tensor engine, VGG-like classifier, BCE loss, and ADAM.
//! - [`ssl`]: pair enumeration, composite loss, and the per-run training loop.
//! - [`harness`]: grid search over (C/N0, labelled count, lambda, sigma), statistics and reports.

pub mod error;
pub mod harness;
pub mod io;
pub mod nn;
pub mod ot;
pub mod ssl;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};
