//! Parameterized layers shared by the networks.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Init, ParamId, ParamStore, Tape, Var};

/// Affine map over the last dimension.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.create(
            &format!("{name}.weight"),
            &[cin, cout],
            Init::Normal { fan_in: cin, gain: 1.0 },
            rng,
        )?;
        let b = if bias {
            Some(store.create(&format!("{name}.bias"), &[cout], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self { w, b, cin, cout })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = self.b.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }
}

/// 2-D convolution over `(N, H, W, C)` with `same`-style padding for
/// stride 1 and halving for stride 2.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub k: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub depthwise: bool,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        ksize: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let k = store.create(
            &format!("{name}.weight"),
            &[ksize, ksize, cin, cout],
            Init::Normal {
                fan_in: ksize * ksize * cin,
                gain: 1.0,
            },
            rng,
        )?;
        let b = if bias {
            Some(store.create(&format!("{name}.bias"), &[cout], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self {
            k,
            b,
            stride,
            pad: ksize / 2,
            depthwise: false,
        })
    }

    pub fn depthwise(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        bias: bool,
    ) -> Result<Self> {
        let k = store.create(
            &format!("{name}.weight"),
            &[3, 3, channels],
            Init::Normal { fan_in: 9, gain: 1.0 },
            rng,
        )?;
        let b = if bias {
            Some(store.create(&format!("{name}.bias"), &[channels], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self {
            k,
            b,
            stride: 1,
            pad: 1,
            depthwise: true,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let k = tape.param(self.k);
        let y = tape.conv2d(x, k, self.stride, self.pad, self.depthwise)?;
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.create(&format!("{name}.gamma"), &[channels], Init::Constant(1.0), rng)?,
            beta: store.create(&format!("{name}.beta"), &[channels], Init::Zeros, rng)?,
            eps: 1e-6,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layernorm(x, g, b, self.eps)
    }
}

/// `x + conv(gelu(conv(x)))`, both 3x3.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), channels, channels, 3, 1, true)?,
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), channels, channels, 3, 1, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, x)?;
        let h = tape.gelu(h)?;
        let h = self.conv2.forward(tape, h)?;
        tape.add(x, h)
    }
}
