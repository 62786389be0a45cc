//! A transform-based learned video codec.
//!
//! Frames are mapped to latents by an analysis transform built from
//! state-space scans over reversibly re-ordered video features, quantized,
//! range-coded under a conditional channel-wise Gaussian entropy model, refined
//! and decoded by the mirrored synthesis transform.
//!
//! Module map:
//!
//! - [`tensor`]: dense tensors, reverse-mode autodiff, parameters, checkpoints
//! - [`geom`]: scan-order transforms, the selective scan, GTMB and CMM blocks
//! - [`locality`]: difference convolutions, HCB and LRFFN
//! - [`codec`]: EVSS blocks and the analysis/synthesis transforms
//! - [`entropy`]: hyperprior, motion alignment, condition network, slice model
//! - [`bitstream`]: CDF tables, range coder and the container format
//! - [`train`]: losses, synthetic data, optimizer and the two training stages
//! - [`cli`]: video I/O, metrics, and the command-line front end

pub mod bitstream;
pub mod cli;
pub mod codec;
pub mod entropy;
mod error;
pub mod geom;
pub mod locality;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
