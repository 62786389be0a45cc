use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::cgn::Cgn;
use super::gaussian::P_MIN;
use super::hyper::{FactorizedPrior, HyperAnalysis, HyperSynthesis};
use super::motion::MotionEstimator;
use super::slice::{SliceNet, SliceVars};
use crate::codec::{CodecConfig, NUM_SLICES};
use crate::error::{shape_err, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// How the temporal condition reaches the slice networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionMode {
    /// Motion alignment and condition network active.
    Enabled,
    /// `c_t` replaced by zeros (ablation).
    Zeroed,
}

/// Quantization used by a differentiable forward pass.
pub enum Quantization<'r> {
    /// Uniform noise for the rate path, straight-through rounding elsewhere.
    Noise(&'r mut ChaCha8Rng),
    /// Rounding everywhere (straight-through gradient).
    Round,
}

/// Round half away from zero.
pub fn quantize(v: f64) -> f64 {
    v.round()
}

/// The two most recent refined latents of the current GOP.
#[derive(Clone, Debug, Default)]
pub struct ConditionBuffer {
    prev1: Option<Tensor>,
    prev2: Option<Tensor>,
}

impl ConditionBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.prev1 = None;
        self.prev2 = None;
    }

    pub fn push(&mut self, y_bar: Tensor) {
        self.prev2 = self.prev1.take();
        self.prev1 = Some(y_bar);
    }

    /// `(prev2, prev1)`: `None` before the first frame is decoded; a lone
    /// reference is duplicated.
    pub fn references(&self) -> Option<(&Tensor, &Tensor)> {
        let p1 = self.prev1.as_ref()?;
        Some((self.prev2.as_ref().unwrap_or(p1), p1))
    }
}

/// Tensors produced for one slice.
#[derive(Clone, Debug)]
pub struct SliceParams {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub residual: Tensor,
}

/// Temporal context of one frame.
#[derive(Clone, Debug)]
pub struct FrameCondition {
    /// Rectified flow, `(1, h, w, 2)`; zero without references.
    pub flow: Tensor,
    /// Warped `prev1`.
    pub aligned: Tensor,
    pub condition: Tensor,
}

/// Differentiable GOP pass used for training.
pub struct GopPass {
    /// Refined latents `(T, h, w, M)`.
    pub y_bar: Var,
    /// Per-element likelihoods of the latent, one per frame and slice.
    pub likelihood_y: Vec<Var>,
    pub likelihood_z: Var,
}

/// Hyperprior, motion alignment, condition network and slice networks.
#[derive(Clone, Debug)]
pub struct EntropyModel {
    pub cfg: CodecConfig,
    pub h_a: HyperAnalysis,
    pub h_s: HyperSynthesis,
    pub z_prior: FactorizedPrior,
    pub motion: MotionEstimator,
    pub cgn: Cgn,
    pub slices: Vec<SliceNet>,
    pub mode: ConditionMode,
}

impl EntropyModel {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &CodecConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            h_a: HyperAnalysis::new(store, rng, cfg)?,
            h_s: HyperSynthesis::new(store, rng, cfg)?,
            z_prior: FactorizedPrior::new(store, rng, cfg.hyper_latent_channels)?,
            motion: MotionEstimator::new(store, rng, cfg)?,
            cgn: Cgn::new(store, rng, cfg)?,
            slices: (0..NUM_SLICES)
                .map(|j| SliceNet::new(store, rng, cfg, j))
                .collect::<Result<_>>()?,
            mode: ConditionMode::Enabled,
        })
    }

    fn check_latent(&self, shape: &[usize]) -> Result<()> {
        let ok = shape.len() == 4
            && shape[3] == self.cfg.latent_channels
            && shape[1] % crate::codec::HYPER_DOWNSAMPLE == 0
            && shape[2] % crate::codec::HYPER_DOWNSAMPLE == 0
            && shape[1] > 0
            && shape[2] > 0;
        if !ok {
            return Err(shape_err(
                "entropy model",
                format!(
                    "latent must be (T, h, w, {}) with h, w multiples of {}, got {shape:?}",
                    self.cfg.latent_channels,
                    crate::codec::HYPER_DOWNSAMPLE
                ),
            ));
        }
        Ok(())
    }

    /// Temporal condition on a tape. `refs` is `(prev2, prev1)`.
    pub fn condition_on_tape(&self, tape: &mut Tape, refs: Option<(Var, Var)>, frame_shape: &[usize]) -> Result<(Var, Var, Var)> {
        let s = self.cfg.slice_channels();
        let cond_shape = [frame_shape[0], frame_shape[1], frame_shape[2], s];
        let flow_shape = [frame_shape[0], frame_shape[1], frame_shape[2], 2];
        match (self.mode, refs) {
            (ConditionMode::Zeroed, _) => {
                let flow = tape.constant(Tensor::zeros(&flow_shape));
                let aligned = tape.constant(Tensor::zeros(frame_shape));
                let c = tape.constant(Tensor::zeros(&cond_shape));
                Ok((flow, aligned, c))
            }
            (ConditionMode::Enabled, None) => {
                let zeros = tape.constant(Tensor::zeros(frame_shape));
                let flow = tape.constant(Tensor::zeros(&flow_shape));
                let c = self.cgn.forward(tape, zeros, zeros, zeros)?;
                Ok((flow, zeros, c))
            }
            (ConditionMode::Enabled, Some((p2, p1))) => {
                let flow = self.motion.estimate(tape, p2, p1)?;
                let aligned = super::motion::align(tape, p1, flow)?;
                let c = self.cgn.forward(tape, aligned, p2, p1)?;
                Ok((flow, aligned, c))
            }
        }
    }

    /// Differentiable pass over one GOP of latents `(T, h, w, M)`.
    pub fn forward_gop(&self, tape: &mut Tape, y: Var, quant: Quantization) -> Result<GopPass> {
        let shape = tape.shape(y).to_vec();
        self.check_latent(&shape)?;
        let frames = shape[0];
        let mut quant = quant;
        let z = self.h_a.forward(tape, y)?;
        let z_shape = tape.shape(z).to_vec();
        let z_rate = self.rate_input(tape, z, &mut quant)?;
        let z_hat = tape.round_ste(z)?;
        let (z_mu, z_sigma) = self.z_prior.params(tape, &z_shape)?;
        let likelihood_z = tape.gaussian_likelihood(z_rate, z_mu, z_sigma, P_MIN)?;
        let (f_mu, f_sigma) = self.h_s.forward(tape, z_hat)?;

        let frame_shape = [1, shape[1], shape[2], shape[3]];
        let s = self.cfg.slice_channels();
        let mut refs: Vec<Var> = Vec::new();
        let mut likelihood_y = Vec::with_capacity(frames * NUM_SLICES);
        let mut outputs = Vec::with_capacity(frames);
        for t in 0..frames {
            let y_t = tape.select_rows(y, t, 1)?;
            let fm = tape.select_rows(f_mu, t, 1)?;
            let fs = tape.select_rows(f_sigma, t, 1)?;
            let r = match refs.len() {
                0 => None,
                1 => Some((refs[0], refs[0])),
                n => Some((refs[n - 2], refs[n - 1])),
            };
            let (_, _, c) = self.condition_on_tape(tape, r, &frame_shape)?;
            let mut prefix: Vec<Var> = Vec::with_capacity(NUM_SLICES);
            for net in &self.slices {
                let p = net.forward(tape, fm, fs, &prefix, c)?;
                let y_j = tape.slice_channels(y_t, net.index * s, s)?;
                let y_rate = self.rate_input(tape, y_j, &mut quant)?;
                likelihood_y.push(tape.gaussian_likelihood(y_rate, p.mu, p.sigma, P_MIN)?);
                let y_hat = tape.round_ste(y_j)?;
                prefix.push(tape.add(y_hat, p.residual)?);
            }
            let y_bar_t = tape.concat_channels(&prefix)?;
            refs.push(y_bar_t);
            outputs.push(y_bar_t);
        }
        let y_bar = tape.concat_rows(&outputs)?;
        Ok(GopPass {
            y_bar,
            likelihood_y,
            likelihood_z,
        })
    }

    fn rate_input(&self, tape: &mut Tape, v: Var, quant: &mut Quantization) -> Result<Var> {
        match quant {
            Quantization::Noise(rng) => {
                let shape = tape.shape(v).to_vec();
                let n: usize = shape.iter().product();
                let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let noise = tape.constant(Tensor::new(shape, noise)?);
                tape.add(v, noise)
            }
            Quantization::Round => tape.round_ste(v),
        }
    }

    /// Hyper-latent `z` of latents `(T, h, w, M)`.
    pub fn hyper_encode(&self, store: &ParamStore, y: &Tensor) -> Result<Tensor> {
        self.check_latent(y.shape())?;
        let mut tape = Tape::inference(store);
        let y = tape.constant(y.clone());
        let z = self.h_a.forward(&mut tape, y)?;
        Ok(tape.value(z).clone())
    }

    /// `(f_mu, f_sigma)` from the quantized hyper-latent.
    pub fn hyper_decode(&self, store: &ParamStore, z_hat: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::inference(store);
        let z = tape.constant(z_hat.clone());
        let (m, s) = self.h_s.forward(&mut tape, z)?;
        Ok((tape.value(m).clone(), tape.value(s).clone()))
    }

    /// Prior `(mu, sigma)` for a hyper-latent of `shape`.
    pub fn z_prior_params(&self, store: &ParamStore, shape: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::inference(store);
        let (m, s) = self.z_prior.params(&mut tape, shape)?;
        Ok((tape.value(m).clone(), tape.value(s).clone()))
    }

    /// Temporal condition of the next frame from decoded state only.
    pub fn frame_condition(&self, store: &ParamStore, buffer: &ConditionBuffer, frame_shape: &[usize]) -> Result<FrameCondition> {
        let mut tape = Tape::inference(store);
        let refs = buffer.references().map(|(p2, p1)| {
            let p2 = tape.constant(p2.clone());
            let p1 = tape.constant(p1.clone());
            (p2, p1)
        });
        let (flow, aligned, c) = self.condition_on_tape(&mut tape, refs, frame_shape)?;
        Ok(FrameCondition {
            flow: tape.value(flow).clone(),
            aligned: tape.value(aligned).clone(),
            condition: tape.value(c).clone(),
        })
    }

    /// Slice `j` parameters; `prefix` holds the refined slices `0..j`.
    pub fn slice_params(
        &self,
        store: &ParamStore,
        j: usize,
        f_mu: &Tensor,
        f_sigma: &Tensor,
        prefix: &[Tensor],
        condition: &Tensor,
    ) -> Result<SliceParams> {
        let mut tape = Tape::inference(store);
        let fm = tape.constant(f_mu.clone());
        let fs = tape.constant(f_sigma.clone());
        let pre: Vec<Var> = prefix.iter().map(|p| tape.constant(p.clone())).collect();
        let c = tape.constant(condition.clone());
        let SliceVars { mu, sigma, residual } = self.slices[j].forward(&mut tape, fm, fs, &pre, c)?;
        Ok(SliceParams {
            mu: tape.value(mu).clone(),
            sigma: tape.value(sigma).clone(),
            residual: tape.value(residual).clone(),
        })
    }

    /// The slice pass of one frame shared by encoder and decoder.
    ///
    /// For each slice in order, `code(j, params)` must return the quantized
    /// slice `ŷ_j` (the encoder rounds and writes it, the decoder reads it).
    /// Returns the refined latent `ȳ_t`, `(1, h, w, M)`, and pushes it into
    /// `buffer`.
    pub fn slice_pass<F>(
        &self,
        store: &ParamStore,
        f_mu: &Tensor,
        f_sigma: &Tensor,
        buffer: &mut ConditionBuffer,
        mut code: F,
    ) -> Result<Tensor>
    where
        F: FnMut(usize, &SliceParams) -> Result<Tensor>,
    {
        let fs = f_mu.shape();
        let frame_shape = [1, fs[1], fs[2], self.cfg.latent_channels];
        let cond = self.frame_condition(store, buffer, &frame_shape)?;
        let mut prefix: Vec<Tensor> = Vec::with_capacity(NUM_SLICES);
        for j in 0..NUM_SLICES {
            let p = self.slice_params(store, j, f_mu, f_sigma, &prefix, &cond.condition)?;
            let y_hat = code(j, &p)?;
            if y_hat.shape() != p.mu.shape() {
                return Err(shape_err("slice_pass", format!("slice {j}: {:?} vs {:?}", y_hat.shape(), p.mu.shape())));
            }
            let y_bar: Vec<f64> = y_hat.data().iter().zip(p.residual.data()).map(|(a, b)| a + b).collect();
            prefix.push(Tensor::new(y_hat.shape().to_vec(), y_bar)?);
        }
        let refs: Vec<&Tensor> = prefix.iter().collect();
        let y_bar = Tensor::concat_last(&refs)?;
        buffer.push(y_bar.clone());
        Ok(y_bar)
    }
}

/// `-sum(log2 p)` over likelihood tensors, on the tape.
pub fn total_bits(tape: &mut Tape, likelihoods: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &l in likelihoods {
        let lg = tape.unary(l, crate::tensor::Unary::Log)?;
        let s = tape.sum(lg)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let s = acc.ok_or_else(|| crate::error::Error::InvalidArgument("no likelihoods".into()))?;
    tape.scale(s, -std::f64::consts::LOG2_E)
}
