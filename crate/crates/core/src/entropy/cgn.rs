//! Condition generation network: residual blocks alternating with
//! non-overlapping windowed self-attention.

use rand_chacha::ChaCha8Rng;

use crate::codec::CodecConfig;
use crate::error::{shape_err, Result};
use crate::nn::{Conv2d, LayerNorm, Linear, ResBlock};
use crate::tensor::{ParamStore, Tape, Var};

/// Largest window side `<= window` dividing both spatial dims.
pub fn fit_window(h: usize, w: usize, window: usize) -> usize {
    (1..=window.min(h).min(w)).rev().find(|s| h % s == 0 && w % s == 0).unwrap_or(1)
}

/// Gather index taking `(N, H, W, C)` to `(N * H/s * W/s, s * s, C)` windows.
pub fn window_partition_index(shape: &[usize], s: usize) -> Vec<usize> {
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let mut idx = Vec::with_capacity(n * h * w * c);
    for b in 0..n {
        for wy in 0..h / s {
            for wx in 0..w / s {
                for iy in 0..s {
                    for ix in 0..s {
                        let base = ((b * h + wy * s + iy) * w + wx * s + ix) * c;
                        idx.extend(base..base + c);
                    }
                }
            }
        }
    }
    idx
}

fn invert(index: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; index.len()];
    for (dst, &src) in index.iter().enumerate() {
        inv[src] = dst;
    }
    inv
}

/// Single-head self-attention within `s x s` windows, pre-norm, residual.
#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub norm: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub window: usize,
    pub channels: usize,
}

impl WindowAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize, window: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, rng, &format!("{name}.norm"), channels)?,
            qkv: Linear::new(store, rng, &format!("{name}.qkv"), channels, 3 * channels, true)?,
            proj: Linear::new(store, rng, &format!("{name}.proj"), channels, channels, true)?,
            window,
            channels,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[3] != self.channels {
            return Err(shape_err("window_attention", format!("{shape:?}")));
        }
        let s = fit_window(shape[1], shape[2], self.window);
        let tokens = s * s;
        let groups = shape[0] * shape[1] * shape[2] / tokens;
        let c = self.channels;
        let part = window_partition_index(&shape, s);
        let unpart = invert(&part);
        let h = self.norm.forward(tape, x)?;
        let h = tape.gather(h, part, &[groups, tokens, c])?;
        let qkv = self.qkv.forward(tape, h)?;
        let qkv = tape.split_channels(qkv, 3)?;
        let scores = tape.matmul(qkv[0], qkv[1], false, true)?;
        let scores = tape.scale(scores, 1.0 / (c as f64).sqrt())?;
        let att = tape.softmax(scores)?;
        let out = tape.matmul(att, qkv[2], false, false)?;
        let out = self.proj.forward(tape, out)?;
        let out = tape.gather(out, unpart, &shape)?;
        tape.add(x, out)
    }
}

#[derive(Clone, Debug)]
enum CgnBlock {
    Res(ResBlock),
    Attn(WindowAttention),
}

/// Fuses the aligned latent and both references into the condition `c_t`
/// with one latent slice's worth of channels.
#[derive(Clone, Debug)]
pub struct Cgn {
    head: Conv2d,
    blocks: Vec<CgnBlock>,
    tail: Conv2d,
}

impl Cgn {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &CodecConfig) -> Result<Self> {
        let (m, c) = (cfg.latent_channels, cfg.condition_channels);
        let head = Conv2d::new(store, rng, "cgn.head", 3 * m, c, 3, 1, true)?;
        let mut blocks = Vec::new();
        for i in 0..2 {
            blocks.push(CgnBlock::Res(ResBlock::new(store, rng, &format!("cgn.res{i}"), c)?));
            blocks.push(CgnBlock::Attn(WindowAttention::new(
                store,
                rng,
                &format!("cgn.attn{i}"),
                c,
                cfg.attention_window,
            )?));
        }
        let tail = Conv2d::new(store, rng, "cgn.tail", c, cfg.slice_channels(), 3, 1, true)?;
        Ok(Self { head, blocks, tail })
    }

    pub fn forward(&self, tape: &mut Tape, aligned: Var, prev2: Var, prev1: Var) -> Result<Var> {
        let x = tape.concat_channels(&[aligned, prev2, prev1])?;
        let mut h = self.head.forward(tape, x)?;
        for b in &self.blocks {
            h = match b {
                CgnBlock::Res(r) => r.forward(tape, h)?,
                CgnBlock::Attn(a) => a.forward(tape, h)?,
            };
        }
        self.tail.forward(tape, h)
    }
}
