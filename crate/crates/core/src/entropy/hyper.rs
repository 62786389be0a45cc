//! Hyperprior transforms and the factorized prior of the hyper-latent.

use rand_chacha::ChaCha8Rng;

use super::gaussian::SIGMA_MIN;
use crate::codec::CodecConfig;
use crate::error::Result;
use crate::nn::Conv2d;
use crate::tensor::{Init, ParamId, ParamStore, Tape, Tensor, Var};

/// `h_a`: latent to hyper-latent at 1/4 resolution.
#[derive(Clone, Debug)]
pub struct HyperAnalysis {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
}

impl HyperAnalysis {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &CodecConfig) -> Result<Self> {
        let (m, h, z) = (cfg.latent_channels, cfg.hyper_channels, cfg.hyper_latent_channels);
        Ok(Self {
            conv1: Conv2d::new(store, rng, "h_a.conv1", m, h, 3, 1, true)?,
            conv2: Conv2d::new(store, rng, "h_a.conv2", h, h, 3, 2, true)?,
            conv3: Conv2d::new(store, rng, "h_a.conv3", h, z, 3, 2, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, y)?;
        let h = tape.gelu(h)?;
        let h = self.conv2.forward(tape, h)?;
        let h = tape.gelu(h)?;
        self.conv3.forward(tape, h)
    }
}

/// `h_s`: quantized hyper-latent to the prior features `(f_mu, f_sigma)`.
#[derive(Clone, Debug)]
pub struct HyperSynthesis {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
}

impl HyperSynthesis {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &CodecConfig) -> Result<Self> {
        let (m, h, z) = (cfg.latent_channels, cfg.hyper_channels, cfg.hyper_latent_channels);
        Ok(Self {
            conv1: Conv2d::new(store, rng, "h_s.conv1", z, h, 3, 1, true)?,
            conv2: Conv2d::new(store, rng, "h_s.conv2", h, h, 3, 1, true)?,
            conv3: Conv2d::new(store, rng, "h_s.conv3", h, 2 * m, 3, 1, true)?,
        })
    }

    /// Returns `(f_mu, f_sigma)`, each `(T, h, w, M)`.
    pub fn forward(&self, tape: &mut Tape, z_hat: Var) -> Result<(Var, Var)> {
        let h = tape.upsample2(z_hat)?;
        let h = self.conv1.forward(tape, h)?;
        let h = tape.gelu(h)?;
        let h = tape.upsample2(h)?;
        let h = self.conv2.forward(tape, h)?;
        let h = tape.gelu(h)?;
        let f = self.conv3.forward(tape, h)?;
        let parts = tape.split_channels(f, 2)?;
        Ok((parts[0], parts[1]))
    }
}

/// Per-channel Gaussian prior for the hyper-latent.
#[derive(Clone, Debug)]
pub struct FactorizedPrior {
    pub mu: ParamId,
    /// Scale before `softplus`.
    pub raw_sigma: ParamId,
    pub channels: usize,
}

impl FactorizedPrior {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, channels: usize) -> Result<Self> {
        // softplus(0.5413) = 1
        Ok(Self {
            mu: store.create("z_prior.mu", &[channels], Init::Zeros, rng)?,
            raw_sigma: store.create("z_prior.raw_sigma", &[channels], Init::Constant(0.541_324_854_612_918_1), rng)?,
            channels,
        })
    }

    /// Broadcast `(mu, sigma)` to `shape` (channels last).
    pub fn params(&self, tape: &mut Tape, shape: &[usize]) -> Result<(Var, Var)> {
        let zeros = tape.constant(Tensor::zeros(shape));
        let mu = tape.param(self.mu);
        let mu = tape.add_bias(zeros, mu)?;
        let raw = tape.param(self.raw_sigma);
        let raw = tape.add_bias(zeros, raw)?;
        let sigma = tape.softplus(raw)?;
        let sigma = tape.lower_bound(sigma, SIGMA_MIN)?;
        Ok((mu, sigma))
    }
}
