//! Per-slice parameter networks.

use rand_chacha::ChaCha8Rng;

use super::gaussian::SIGMA_MIN;
use crate::codec::CodecConfig;
use crate::error::Result;
use crate::nn::Conv2d;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// `conv3x3 -> GeLU -> conv3x3`.
#[derive(Clone, Debug)]
pub struct SliceHead {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl SliceHead {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        hidden: usize,
        cout: usize,
        zero_out: bool,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(store, rng, &format!("{name}.conv1"), cin, hidden, 3, 1, true)?;
        let conv2 = Conv2d::new(store, rng, &format!("{name}.conv2"), hidden, cout, 3, 1, true)?;
        if zero_out {
            let k = store.get_mut(conv2.k);
            k.tensor = Tensor::zeros(k.tensor.shape());
        }
        Ok(Self { conv1, conv2 })
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, x)?;
        let h = tape.gelu(h)?;
        self.conv2.forward(tape, h)
    }
}

/// Predicts `(mu, sigma, r)` for slice `j` from decoder-side inputs only:
/// the hyperprior features, the refined slices `0..j` and the condition.
#[derive(Clone, Debug)]
pub struct SliceNet {
    pub index: usize,
    mu: SliceHead,
    sigma: SliceHead,
    residual: SliceHead,
}

/// Outputs of one slice network.
#[derive(Clone, Copy, Debug)]
pub struct SliceVars {
    pub mu: Var,
    pub sigma: Var,
    pub residual: Var,
}

impl SliceNet {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &CodecConfig, index: usize) -> Result<Self> {
        let s = cfg.slice_channels();
        let cin = 2 * cfg.latent_channels + index * s + s;
        let name = format!("slice{index}");
        let hid = cfg.slice_hidden;
        Ok(Self {
            index,
            mu: SliceHead::new(store, rng, &format!("{name}.mu"), cin, hid, s, false)?,
            sigma: SliceHead::new(store, rng, &format!("{name}.sigma"), cin, hid, s, false)?,
            residual: SliceHead::new(store, rng, &format!("{name}.residual"), cin, hid, s, true)?,
        })
    }

    /// `prefix` must hold exactly the refined slices `0..index`.
    pub fn forward(&self, tape: &mut Tape, f_mu: Var, f_sigma: Var, prefix: &[Var], cond: Var) -> Result<SliceVars> {
        assert_eq!(prefix.len(), self.index, "slice {} given {} previous slices", self.index, prefix.len());
        let mut inputs = vec![f_mu, f_sigma];
        inputs.extend_from_slice(prefix);
        inputs.push(cond);
        let x = tape.concat_channels(&inputs)?;
        let mu = self.mu.forward(tape, x)?;
        let sigma = self.sigma.forward(tape, x)?;
        let sigma = tape.softplus(sigma)?;
        let sigma = tape.lower_bound(sigma, SIGMA_MIN)?;
        let residual = self.residual.forward(tape, x)?;
        Ok(SliceVars { mu, sigma, residual })
    }
}
