//! Analysis and synthesis transforms built from EVSS blocks.
//!
//! Frames enter as `(T, 3, H, W)` unit-interval tensors and are processed
//! channels-last. Each analysis stage is a stride-2 3x3 convolution followed
//! by EVSS blocks; a final 3x3 convolution produces the `M`-channel latent
//! at 1/16 resolution. The synthesis transform mirrors it with
//! nearest-neighbour upsampling.

mod config;
mod model;

pub use config::{CodecConfig, Preset, DOWNSAMPLE, HYPER_DOWNSAMPLE, NUM_SLICES, NUM_STAGES, PAD_MULTIPLE};

pub use model::{CodedGop, Model};

use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::geom::Cmm;
use crate::locality::Lrffn;
use crate::nn::{Conv2d, LayerNorm};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// `x + CMM(LN(x))`, then `x + LRFFN(LN(x))`.
#[derive(Clone, Debug)]
pub struct Evss {
    pub norm1: LayerNorm,
    pub cmm: Cmm,
    pub norm2: LayerNorm,
    pub ffn: Lrffn,
}

impl Evss {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        state_dim: usize,
        expansion: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, rng, &format!("{name}.norm1"), channels)?,
            cmm: Cmm::new(store, rng, &format!("{name}.cmm"), channels, state_dim)?,
            norm2: LayerNorm::new(store, rng, &format!("{name}.norm2"), channels)?,
            ffn: Lrffn::new(store, rng, &format!("{name}.ffn"), channels, channels * expansion)?,
        })
    }

    /// `x` is `(T, H, W, C)`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.norm1.forward(tape, x)?;
        let h = self.cmm.forward(tape, h)?;
        let x = tape.add(x, h)?;
        let h = self.norm2.forward(tape, x)?;
        let h = self.ffn.forward(tape, h)?;
        tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
struct Stage {
    conv: Conv2d,
    blocks: Vec<Evss>,
}

/// Analysis transform `g_a`.
#[derive(Clone, Debug)]
pub struct Analysis {
    stages: Vec<Stage>,
    head: Conv2d,
}

/// Synthesis transform `g_s`.
#[derive(Clone, Debug)]
pub struct Synthesis {
    head: Conv2d,
    /// Coarsest first.
    stages: Vec<Stage>,
}

impl Analysis {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &CodecConfig) -> Result<Self> {
        let mut stages = Vec::with_capacity(NUM_STAGES);
        let mut cin = 3;
        for (s, &c) in cfg.stage_channels.iter().enumerate() {
            let name = format!("g_a.stage{s}");
            let conv = Conv2d::new(store, rng, &format!("{name}.down"), cin, c, 3, 2, true)?;
            let blocks = (0..cfg.evss_per_stage)
                .map(|b| Evss::new(store, rng, &format!("{name}.evss{b}"), c, cfg.state_dim, cfg.ffn_expansion))
                .collect::<Result<_>>()?;
            stages.push(Stage { conv, blocks });
            cin = c;
        }
        let head = Conv2d::new(store, rng, "g_a.head", cin, cfg.latent_channels, 3, 1, true)?;
        Ok(Self { stages, head })
    }

    /// `(T, H, W, 3)` pixels to `(T, H/16, W/16, M)` latents.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[3] != 3 || s[1] % DOWNSAMPLE != 0 || s[2] % DOWNSAMPLE != 0 || s[1] == 0 || s[2] == 0 {
            return Err(shape_err(
                "encode_ga",
                format!("expected (T, H, W, 3) with H, W multiples of {DOWNSAMPLE}, got {s:?}"),
            ));
        }
        let mut h = x;
        for stage in &self.stages {
            h = stage.conv.forward(tape, h)?;
            for b in &stage.blocks {
                h = b.forward(tape, h)?;
            }
        }
        self.head.forward(tape, h)
    }
}

impl Synthesis {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &CodecConfig) -> Result<Self> {
        let widths = cfg.stage_channels;
        let head = Conv2d::new(store, rng, "g_s.head", cfg.latent_channels, widths[NUM_STAGES - 1], 3, 1, true)?;
        let mut stages = Vec::with_capacity(NUM_STAGES);
        for s in (0..NUM_STAGES).rev() {
            let name = format!("g_s.stage{s}");
            let c = widths[s];
            let cout = if s == 0 { 3 } else { widths[s - 1] };
            let blocks = (0..cfg.evss_per_stage)
                .map(|b| Evss::new(store, rng, &format!("{name}.evss{b}"), c, cfg.state_dim, cfg.ffn_expansion))
                .collect::<Result<_>>()?;
            let conv = Conv2d::new(store, rng, &format!("{name}.up"), c, cout, 3, 1, true)?;
            if s == 0 {
                // start reconstructions at mid-grey
                let b = conv.b.expect("bias requested");
                store.get_mut(b).tensor = Tensor::full(&[3], 0.5);
            }
            stages.push(Stage { conv, blocks });
        }
        Ok(Self { head, stages })
    }

    /// `(T, h, w, M)` refined latents to unclamped `(T, 16h, 16w, 3)` pixels.
    pub fn forward(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let mut h = self.head.forward(tape, y)?;
        for stage in &self.stages {
            for b in &stage.blocks {
                h = b.forward(tape, h)?;
            }
            h = tape.upsample2(h)?;
            h = stage.conv.forward(tape, h)?;
        }
        Ok(h)
    }
}

/// `(T, C, H, W)` to `(T, H, W, C)`.
pub fn to_channels_last(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(shape_err("video layout", format!("expected rank 4, got {:?}", x.shape())));
    }
    let (idx, shape) = crate::tensor::permute_index(x.shape(), &[0, 2, 3, 1])?;
    x.gather(&idx, &shape)
}

/// `(T, H, W, C)` to `(T, C, H, W)`.
pub fn to_channels_first(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(shape_err("video layout", format!("expected rank 4, got {:?}", x.shape())));
    }
    let (idx, shape) = crate::tensor::permute_index(x.shape(), &[0, 3, 1, 2])?;
    x.gather(&idx, &shape)
}

/// The pixel transforms of one codec instance.
#[derive(Clone, Debug)]
pub struct Transforms {
    pub analysis: Analysis,
    pub synthesis: Synthesis,
}

impl Transforms {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &CodecConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            analysis: Analysis::new(store, rng, cfg)?,
            synthesis: Synthesis::new(store, rng, cfg)?,
        })
    }

    /// Encode a `(T, 3, H, W)` video into `(T, H/16, W/16, M)` latents.
    pub fn encode_ga(&self, store: &ParamStore, video: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference(store);
        let x = tape.constant(to_channels_last(video)?);
        let y = self.analysis.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Decode `(T, h, w, M)` refined latents into a `(T, 3, 16h, 16w)` video
    /// clamped to the unit interval.
    pub fn decode_gs(&self, store: &ParamStore, latents: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference(store);
        let y = tape.constant(latents.clone());
        let x = self.synthesis.forward(&mut tape, y)?;
        let x = tape.clamp(x, 0.0, 1.0)?;
        to_channels_first(tape.value(x))
    }
}

/// Zero every parameter of `store` whose name starts with `prefix` except
/// LayerNorm gains, making residual blocks under it the identity.
pub fn zero_block(store: &mut ParamStore, prefix: &str) {
    for p in store.iter_mut() {
        if p.name.starts_with(prefix) && !p.name.ends_with(".gamma") {
            p.tensor = Tensor::zeros(p.tensor.shape());
        }
    }
}
