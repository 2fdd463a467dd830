//! Numerical core for weather-conditioned salient object detection.
//!
//! Everything in this crate is pure computation over `alloc` containers:
//! a dense f64 tensor type with reverse-mode autodiff, the noise-indicator
//! fusion blocks and the staged encoder/decoder built on top of it, the
//! composite BCE+SSIM+IoU training loss, the standard saliency evaluation
//! metrics, and an Adam optimizer with step decay. File formats, image IO
//! and the command-line surface live in the companion `wsod-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod gradcheck;
pub mod indicator;
pub mod losses;
pub mod mathx;
pub mod metrics;
pub mod model;
pub mod nifm;
pub mod optim;
pub mod params;
pub mod rng;
pub mod separation;
pub mod tensor;
pub mod train;

pub use error::CoreError;
pub use tensor::{Tape, Tensor};
