//! Conditional channel-wise entropy model.
//!
//! The latent of each frame is split into five channel slices coded in
//! order. Slice `j` gets Gaussian parameters and a residual from a slice
//! network that sees the hyperprior features, the already refined slices
//! `0..j` and a temporal condition `c_t`. The condition comes from the two
//! previous refined latents of the GOP: a flow between them is estimated and
//! rectified, the latest latent is warped by it, and a condition network
//! fuses the result with both references.

pub mod cgn;
pub mod gaussian;
pub mod hyper;
mod model;
pub mod motion;
pub mod slice;
pub mod warp;

pub use model::{
    quantize, total_bits, ConditionBuffer, ConditionMode, EntropyModel, FrameCondition, GopPass, Quantization,
    SliceParams,
};
