//! Two-stage training loop.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::Clip;
use super::loss::{perceptual_style_loss, rd_loss, FeatureExtractor, LossWeights};
use super::optim::{clip_grad_norm, Adam};
use crate::codec::{to_channels_last, Model};
use crate::entropy::Quantization;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

pub const DEFAULT_LR: f64 = 1e-4;
pub const STAGE1_GOP: usize = 5;
pub const STAGE2_GOP: usize = 7;
/// Fractions of the stage-2 run after which the learning rate halves.
pub const STAGE2_HALVING: [f64; 2] = [0.9, 0.96];
pub const CLIP_NORM: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub gop: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Fractions of `steps` at which the learning rate halves.
    pub halving: Vec<f64>,
}

impl TrainConfig {
    pub fn stage1(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            lr: DEFAULT_LR,
            gop: STAGE1_GOP,
            seed,
            clip_norm: CLIP_NORM,
            halving: Vec::new(),
        }
    }

    pub fn stage2(steps: usize, seed: u64) -> Self {
        Self {
            gop: STAGE2_GOP,
            halving: STAGE2_HALVING.to_vec(),
            ..Self::stage1(steps, seed)
        }
    }

    /// Learning rate in effect at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let halvings = self
            .halving
            .iter()
            .filter(|&&f| step as f64 >= (f * self.steps as f64).floor())
            .count();
        self.lr * 0.5f64.powi(halvings as i32)
    }
}

/// One logged training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub rd: f64,
    pub rate_y: f64,
    pub rate_z: f64,
    pub distortion: f64,
    pub perceptual: f64,
    pub style: f64,
    pub grad_norm: f64,
}

impl fmt::Display for TrainRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} rd={:.6} rate_y={:.6} rate_z={:.6} distortion={:.8} perceptual={:.6} style={:.6} grad_norm={:.4}",
            self.step, self.rd, self.rate_y, self.rate_z, self.distortion, self.perceptual, self.style, self.grad_norm
        )
    }
}

/// Rate, distortion and quality of one clip coded with rounding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Model-estimated bits per pixel, latents plus hyper-latents.
    pub bpp: f64,
    pub psnr: f64,
    pub mse: f64,
}

/// Mean over the last `window` entries, or fewer at the start.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

fn gop_window(clip: &Clip, gop: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let frames = clip.frames.shape()[0];
    if frames < gop {
        return Err(Error::InvalidArgument(format!("clip of {frames} frames shorter than gop {gop}")));
    }
    let start = rng.gen_range(0..=frames - gop);
    clip.frames.select_rows(start, gop)
}

/// Forward and backward on one GOP; gradients are left in the store.
pub fn train_step(
    model: &mut Model,
    frames: &Tensor,
    weights: &LossWeights,
    fe: Option<&FeatureExtractor>,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<TrainRecord> {
    let s = frames.shape();
    let pixels = s[2] * s[3];
    let x_cl = to_channels_last(frames)?;
    let (record, grads) = {
        let mut tape = Tape::new(&model.store);
        let x = tape.constant(x_cl);
        let y = model.transforms.analysis.forward(&mut tape, x)?;
        let pass = model.entropy.forward_gop(&mut tape, y, Quantization::Noise(rng))?;
        let x_hat = model.transforms.synthesis.forward(&mut tape, pass.y_bar)?;
        let rd = rd_loss(&mut tape, x, x_hat, &pass.likelihood_y, pass.likelihood_z, pixels, weights.lambda)?;
        let (total, perceptual, style) = match fe {
            Some(fe) if weights.lambda_per > 0.0 || weights.lambda_sty > 0.0 => {
                let (extra, terms) = perceptual_style_loss(&mut tape, x, x_hat, fe, weights)?;
                let total = tape.add(rd.total, extra)?;
                (total, tape.data(terms.perceptual)[0], tape.data(terms.style)[0])
            }
            _ => (rd.total, 0.0, 0.0),
        };
        let loss = tape.data(total)[0];
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss {loss}"),
            });
        }
        let record = TrainRecord {
            step,
            rd: loss,
            rate_y: tape.data(rd.rate_y)[0],
            rate_z: tape.data(rd.rate_z)[0],
            distortion: tape.data(rd.distortion)[0],
            perceptual,
            style,
            grad_norm: 0.0,
        };
        (record, tape.backward(total)?)
    };
    model.store.zero_grads();
    grads.accumulate_into(&mut model.store);
    Ok(record)
}

/// Run `cfg.steps` optimizer steps over `data`, calling `log` after each.
pub fn train(
    model: &mut Model,
    data: &[Clip],
    weights: &LossWeights,
    fe: Option<&FeatureExtractor>,
    cfg: &TrainConfig,
    mut log: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>> {
    if data.is_empty() && cfg.steps > 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let clip = &data[rng.gen_range(0..data.len())];
        let frames = gop_window(clip, cfg.gop, &mut rng)?;
        let mut rec = train_step(model, &frames, weights, fe, &mut rng, step)?;
        rec.grad_norm = clip_grad_norm(&mut model.store, cfg.clip_norm);
        if !rec.grad_norm.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("gradient norm {}", rec.grad_norm),
            });
        }
        opt.lr = cfg.lr_at(step);
        opt.step(&mut model.store);
        model.store.zero_grads();
        log(&rec);
        history.push(rec);
    }
    Ok(history)
}

/// Rate-distortion training at tradeoff `lambda`.
pub fn train_stage1(
    model: &mut Model,
    data: &[Clip],
    lambda: f64,
    cfg: &TrainConfig,
    log: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>> {
    let w = LossWeights::rd_only(lambda)?;
    train(model, data, &w, None, cfg, log)
}

/// Rate-distortion plus perceptual and style training, from a stage-1 model.
pub fn train_stage2(
    model: &mut Model,
    data: &[Clip],
    weights: &LossWeights,
    fe: &FeatureExtractor,
    cfg: &TrainConfig,
    log: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>> {
    train(model, data, weights, Some(fe), cfg, log)
}

/// Model-estimated bpp and PSNR of `clip` coded in GOPs of `gop` frames with
/// rounding. Frame sizes must be multiples of 64.
pub fn evaluate(model: &Model, clip: &Clip, gop: usize) -> Result<Evaluation> {
    let s = clip.frames.shape().to_vec();
    let (frames, h, w) = (s[0], s[2], s[3]);
    let mut bits = 0.0;
    let mut sq = 0.0;
    let mut start = 0;
    while start < frames {
        let len = gop.min(frames - start);
        let x = clip.frames.select_rows(start, len)?;
        let (coded, recon) = model.encode_gop(&x)?;
        bits += coded.estimated_bits();
        sq += recon
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        start += len;
    }
    let mse = sq / clip.frames.len() as f64;
    let psnr = if mse > 0.0 { (10.0 * (1.0 / mse).log10()).min(99.0) } else { 99.0 };
    Ok(Evaluation {
        bpp: bits / (frames * h * w) as f64,
        psnr,
        mse,
    })
}

/// Write `records` as one line each.
pub fn format_log(records: &[TrainRecord]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_schedule() {
        let c = TrainConfig::stage2(100, 0);
        assert_eq!(c.lr_at(0), 1e-4);
        assert_eq!(c.lr_at(89), 1e-4);
        assert_eq!(c.lr_at(90), 5e-5);
        assert_eq!(c.lr_at(96), 2.5e-5);
        assert_eq!(TrainConfig::stage1(100, 0).lr_at(99), 1e-4);
    }

    #[test]
    fn smoothing_window() {
        let s = smoothed(&[2.0, 4.0, 6.0, 8.0], 2);
        assert_eq!(s, vec![2.0, 3.0, 5.0, 7.0]);
    }
}
