//! Two-stream document forgery localization on a small differentiable
//! tensor core.
//!
//! The crate is `no_std` + `alloc`. Everything that touches files, codecs or
//! the command line lives in the `ctpnet` companion crate.
//!
//! - [`tensor`]: dense tensors, a reverse-mode tape and SGD.
//! - [`model`]: character texture stream, image texture stream and the
//!   localization decoder, with a binary checkpoint codec.
//! - [`synth`]: synthetic document rendering and splice / copy-move tampering.
//! - [`metrics`]: pixel-level F1, IoU, MCC, ROC AUC and fake-area binning.
//! - [`train`]: dataset splits, batch preparation and the training loop.
//! - [`robustness`]: resize / crop / noise perturbation sweeps.
//! - [`gradcheck`]: finite-difference verification of every differentiable op.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod real;
pub mod robustness;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Graph, Tensor, Var};
