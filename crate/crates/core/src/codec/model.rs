use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CodecConfig, Transforms, HYPER_DOWNSAMPLE, NUM_SLICES};
use crate::bitstream::{decode_gaussian, encode_gaussian, GopPayload, VALUE_BOUND};
use crate::entropy::gaussian::likelihood;
use crate::entropy::{quantize, ConditionBuffer, EntropyModel};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{load_checkpoint, save_checkpoint, ParamStore, Tensor};

/// A complete codec: parameters, pixel transforms and entropy model.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: CodecConfig,
    pub store: ParamStore,
    pub transforms: Transforms,
    pub entropy: EntropyModel,
}

/// One GOP of latents after entropy coding.
#[derive(Clone, Debug)]
pub struct CodedGop {
    pub payload: GopPayload,
    /// Quantized latents `(T, h, w, M)`.
    pub y_hat: Tensor,
    /// Refined latents `(T, h, w, M)`.
    pub y_bar: Tensor,
    pub z_hat: Tensor,
    /// `-sum(log2 P)` of the quantized latents under the model.
    pub estimated_bits_y: f64,
    pub estimated_bits_z: f64,
}

impl CodedGop {
    pub fn estimated_bits(&self) -> f64 {
        self.estimated_bits_y + self.estimated_bits_z
    }
}

fn round_clamped(v: f64) -> i32 {
    quantize(v).clamp(-f64::from(VALUE_BOUND), f64::from(VALUE_BOUND)) as i32
}

fn estimated_bits(symbols: &[i32], mu: &[f64], sigma: &[f64]) -> f64 {
    symbols
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&v, &m), &s)| -likelihood(f64::from(v), m, s).log2())
        .sum()
}

impl Model {
    /// Seeded initialization.
    pub fn new(cfg: CodecConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let transforms = Transforms::new(&mut store, &mut rng, &cfg)?;
        let entropy = EntropyModel::new(&mut store, &mut rng, &cfg)?;
        Ok(Self {
            cfg,
            store,
            transforms,
            entropy,
        })
    }

    pub fn hash(&self) -> u64 {
        self.store.model_hash()
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        load_checkpoint(&mut self.store, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.store, path)
    }

    /// Hyper-latent shape for latents of spatial size `(h, w)`.
    fn z_shape(&self, frames: usize, h: usize, w: usize) -> [usize; 4] {
        [frames, h / HYPER_DOWNSAMPLE, w / HYPER_DOWNSAMPLE, self.cfg.hyper_latent_channels]
    }

    /// Entropy-code latents `(T, h, w, M)` of one GOP.
    pub fn entropy_encode(&self, y: &Tensor) -> Result<CodedGop> {
        let store = &self.store;
        let z = self.entropy.hyper_encode(store, y)?;
        let z_sym: Vec<i32> = z.data().iter().map(|&v| round_clamped(v)).collect();
        let z_hat = Tensor::new(z.shape().to_vec(), z_sym.iter().map(|&v| f64::from(v)).collect())?;
        let (z_mu, z_sigma) = self.entropy.z_prior_params(store, z.shape())?;
        let z_bytes = encode_gaussian(&z_sym, z_mu.data(), z_sigma.data())?;
        let estimated_bits_z = estimated_bits(&z_sym, z_mu.data(), z_sigma.data());
        let (f_mu, f_sigma) = self.entropy.hyper_decode(store, &z_hat)?;

        let frames = y.shape()[0];
        let s = self.cfg.slice_channels();
        let mut buffer = ConditionBuffer::new();
        let mut estimated_bits_y = 0.0;
        let mut coded_frames = Vec::with_capacity(frames);
        let mut y_hats = Vec::with_capacity(frames);
        let mut y_bars = Vec::with_capacity(frames);
        for t in 0..frames {
            let y_t = y.select_rows(t, 1)?;
            let fm = f_mu.select_rows(t, 1)?;
            let fs = f_sigma.select_rows(t, 1)?;
            let mut streams: [Vec<u8>; NUM_SLICES] = Default::default();
            let mut slices = Vec::with_capacity(NUM_SLICES);
            let y_bar = self.entropy.slice_pass(store, &fm, &fs, &mut buffer, |j, p| {
                let y_j = y_t.slice_last(j * s, s)?;
                let sym: Vec<i32> = y_j.data().iter().map(|&v| round_clamped(v)).collect();
                streams[j] = encode_gaussian(&sym, p.mu.data(), p.sigma.data())?;
                estimated_bits_y += estimated_bits(&sym, p.mu.data(), p.sigma.data());
                let y_hat = Tensor::new(y_j.shape().to_vec(), sym.iter().map(|&v| f64::from(v)).collect())?;
                slices.push(y_hat.clone());
                Ok(y_hat)
            })?;
            let parts: Vec<&Tensor> = slices.iter().collect();
            y_hats.push(Tensor::concat_last(&parts)?);
            y_bars.push(y_bar);
            coded_frames.push(streams);
        }
        Ok(CodedGop {
            payload: GopPayload {
                z: z_bytes,
                frames: coded_frames,
            },
            y_hat: Tensor::concat_rows(&y_hats.iter().collect::<Vec<_>>())?,
            y_bar: Tensor::concat_rows(&y_bars.iter().collect::<Vec<_>>())?,
            z_hat,
            estimated_bits_y,
            estimated_bits_z,
        })
    }

    /// Recover the quantized and refined latents of one GOP from its
    /// payload alone. `(h, w)` is the latent size.
    pub fn entropy_decode(&self, payload: &GopPayload, h: usize, w: usize) -> Result<(Tensor, Tensor)> {
        let store = &self.store;
        let frames = payload.frames.len();
        if frames == 0 {
            return Err(Error::Bitstream("GOP without frames".into()));
        }
        let z_shape = self.z_shape(frames, h, w);
        let (z_mu, z_sigma) = self.entropy.z_prior_params(store, &z_shape)?;
        let z_sym = decode_gaussian(&payload.z, z_mu.data(), z_sigma.data())?;
        let z_hat = Tensor::new(z_shape.to_vec(), z_sym.iter().map(|&v| f64::from(v)).collect())?;
        let (f_mu, f_sigma) = self.entropy.hyper_decode(store, &z_hat)?;

        let mut buffer = ConditionBuffer::new();
        let mut y_hats = Vec::with_capacity(frames);
        let mut y_bars = Vec::with_capacity(frames);
        for (t, streams) in payload.frames.iter().enumerate() {
            let fm = f_mu.select_rows(t, 1)?;
            let fs = f_sigma.select_rows(t, 1)?;
            let mut slices = Vec::with_capacity(NUM_SLICES);
            let y_bar = self.entropy.slice_pass(store, &fm, &fs, &mut buffer, |j, p| {
                let sym = decode_gaussian(&streams[j], p.mu.data(), p.sigma.data())?;
                let y_hat = Tensor::new(p.mu.shape().to_vec(), sym.iter().map(|&v| f64::from(v)).collect())?;
                slices.push(y_hat.clone());
                Ok(y_hat)
            })?;
            let parts: Vec<&Tensor> = slices.iter().collect();
            y_hats.push(Tensor::concat_last(&parts)?);
            y_bars.push(y_bar);
        }
        Ok((
            Tensor::concat_rows(&y_hats.iter().collect::<Vec<_>>())?,
            Tensor::concat_rows(&y_bars.iter().collect::<Vec<_>>())?,
        ))
    }

    /// Encode one GOP of frames `(T, 3, H, W)`; returns the coded latents and
    /// the reconstruction the decoder will produce.
    pub fn encode_gop(&self, frames: &Tensor) -> Result<(CodedGop, Tensor)> {
        let y = self.transforms.encode_ga(&self.store, frames)?;
        let coded = self.entropy_encode(&y)?;
        let recon = self.transforms.decode_gs(&self.store, &coded.y_bar)?;
        Ok((coded, recon))
    }

    /// Decode one GOP of a `height x width` (padded) video.
    pub fn decode_gop(&self, payload: &GopPayload, height: usize, width: usize) -> Result<Tensor> {
        if height % super::PAD_MULTIPLE != 0 || width % super::PAD_MULTIPLE != 0 {
            return Err(shape_err("decode_gop", format!("{height}x{width} is not padded")));
        }
        let (_, y_bar) = self.entropy_decode(payload, height / super::DOWNSAMPLE, width / super::DOWNSAMPLE)?;
        self.transforms.decode_gs(&self.store, &y_bar)
    }
}
