//! Predictive motion alignment: flow between the two previous refined
//! latents, rectified as `alpha * flow + beta`, then used to warp the most
//! recent latent into a pseudo current-frame feature.
//!
//! Flows follow the backward-warp convention of [`super::warp`]: channel 0
//! is the horizontal displacement and channel 1 the vertical one, and
//! `out(p) = feature(p + flow(p))`. Content moving by `(vx, vy)` per frame
//! therefore has flow `(-vx, -vy)`.

use rand_chacha::ChaCha8Rng;

use crate::codec::CodecConfig;
use crate::error::Result;
use crate::nn::{Conv2d, ResBlock};
use crate::tensor::{Init, ParamId, ParamStore, Tape, Tensor, Var};

/// Number of residual blocks in the flow estimator.
pub const MOTION_RES_BLOCKS: usize = 4;

#[derive(Clone, Debug)]
pub struct MotionEstimator {
    head: Conv2d,
    blocks: Vec<ResBlock>,
    tail: Conv2d,
    /// Rectification gain per flow channel.
    pub alpha: ParamId,
    /// Rectification offset per flow channel.
    pub beta: ParamId,
}

impl MotionEstimator {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &CodecConfig) -> Result<Self> {
        let (m, c) = (cfg.latent_channels, cfg.motion_channels);
        let head = Conv2d::new(store, rng, "pma.head", 2 * m, c, 3, 1, true)?;
        let blocks = (0..MOTION_RES_BLOCKS)
            .map(|i| ResBlock::new(store, rng, &format!("pma.res{i}"), c))
            .collect::<Result<_>>()?;
        let tail = Conv2d::new(store, rng, "pma.tail", c, 2, 3, 1, true)?;
        let k = store.get_mut(tail.k);
        k.tensor = Tensor::zeros(k.tensor.shape());
        Ok(Self {
            head,
            blocks,
            tail,
            alpha: store.create("pma.alpha", &[2], Init::Constant(1.0), rng)?,
            beta: store.create("pma.beta", &[2], Init::Zeros, rng)?,
        })
    }

    /// Raw flow `f_{t-2 -> t-1}` from the two references, `(N, h, w, 2)`.
    pub fn raw_flow(&self, tape: &mut Tape, prev2: Var, prev1: Var) -> Result<Var> {
        let x = tape.concat_channels(&[prev2, prev1])?;
        let mut h = self.head.forward(tape, x)?;
        h = tape.gelu(h)?;
        for b in &self.blocks {
            h = b.forward(tape, h)?;
        }
        self.tail.forward(tape, h)
    }

    /// `alpha * flow + beta`, per flow channel.
    pub fn rectify(&self, tape: &mut Tape, flow: Var) -> Result<Var> {
        let a = tape.param(self.alpha);
        let b = tape.param(self.beta);
        let f = tape.mul_bias(flow, a)?;
        tape.add_bias(f, b)
    }

    /// Rectified flow between the references.
    pub fn estimate(&self, tape: &mut Tape, prev2: Var, prev1: Var) -> Result<Var> {
        let f = self.raw_flow(tape, prev2, prev1)?;
        self.rectify(tape, f)
    }
}

/// Warp `feature` by `flow` (backward bilinear, border clamped).
pub fn align(tape: &mut Tape, feature: Var, flow: Var) -> Result<Var> {
    tape.warp(feature, flow)
}

/// Constant backward flow for content translating by `velocity = (vx, vy)`
/// latent pixels per frame.
pub fn translation_flow(frames: usize, height: usize, width: usize, velocity: (f64, f64)) -> Tensor {
    Tensor::from_fn(&[frames, height, width, 2], |i| {
        if i % 2 == 0 {
            -velocity.0
        } else {
            -velocity.1
        }
    })
}
