//! Encode, decode, metrics and train commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::metrics::RateDistortionReport;
use super::video::{crop, pad_replicate, Video};
use crate::bitstream::{pack, unpack, GopPayload, Header, VERSION};
use crate::codec::{CodecConfig, Model, Preset, DOWNSAMPLE, PAD_MULTIPLE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::{
    make_synthetic_dataset, random_specs, train_stage1, train_stage2, FeatureExtractor, LossWeights, TrainConfig,
    TrainRecord, LAMBDA_GRID,
};

pub const DEFAULT_GOP: usize = 8;

/// How to build the model shared by encoder and decoder.
#[derive(Clone, Debug)]
pub struct ModelSource {
    pub preset: Preset,
    /// Initialization seed, used when no checkpoint is given.
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelSource {
    fn default() -> Self {
        Self {
            preset: Preset::Tiny,
            seed: 0,
            checkpoint: None,
        }
    }
}

impl ModelSource {
    pub fn build(&self) -> Result<Model> {
        let mut m = Model::new(CodecConfig::for_preset(self.preset), self.seed)?;
        if let Some(path) = &self.checkpoint {
            m.load(path)?;
        }
        Ok(m)
    }
}

#[derive(Clone, Debug)]
pub struct EncodeOptions {
    pub model: ModelSource,
    pub gop: usize,
    pub lambda_index: usize,
    /// Decode the written stream in-process and require bit-identical latents.
    pub verify: bool,
    pub threads: usize,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            model: ModelSource::default(),
            gop: DEFAULT_GOP,
            lambda_index: 1,
            verify: false,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncodeOutcome {
    pub header: Header,
    pub segments: usize,
    pub report: RateDistortionReport,
    /// Cropped reconstruction the decoder will produce.
    pub reconstruction: Tensor,
}

#[derive(Clone, Debug)]
pub struct DecodeOutcome {
    pub header: Header,
    pub video: Video,
    pub decode_secs: f64,
}

/// Apply `f` to every item on up to `threads` workers, keeping input order.
pub fn par_map<T, R, F>(items: Vec<T>, threads: usize, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync,
{
    let n = items.len();
    let workers = threads.max(1).min(n.max(1));
    if workers == 1 {
        return items.into_iter().map(f).collect();
    }
    let slots: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<Result<R>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let item = slots[i].lock().expect("slot lock").take().expect("each item taken once");
                *results[i].lock().expect("result lock") = Some(f(item));
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.into_inner().expect("result lock").expect("every item processed"))
        .collect()
}

fn check_lambda_index(i: usize) -> Result<u8> {
    if i >= LAMBDA_GRID.len() {
        return Err(Error::InvalidArgument(format!("lambda index {i} not in 0..{}", LAMBDA_GRID.len())));
    }
    Ok(i as u8)
}

fn dim_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} exceeds 65535")))
}

fn frame_bits(payload: &GopPayload) -> Vec<f64> {
    let z_share = 8.0 * payload.z.len() as f64 / payload.frames.len() as f64;
    payload
        .frames
        .iter()
        .map(|f| z_share + 8.0 * f.iter().map(Vec::len).sum::<usize>() as f64)
        .collect()
}

/// Encode `video` into a container.
pub fn encode_video(video: &Video, opts: &EncodeOptions) -> Result<(Vec<u8>, EncodeOutcome)> {
    if opts.gop == 0 || opts.gop > usize::from(u8::MAX) {
        return Err(Error::InvalidArgument(format!("gop {} not in 1..=255", opts.gop)));
    }
    let lambda_index = check_lambda_index(opts.lambda_index)?;
    let model = opts.model.build()?;
    let (t, h, w) = (video.frame_count(), video.height(), video.width());
    let started = Instant::now();
    let mut header = Header {
        version: VERSION,
        preset: opts.model.preset,
        width: dim_u16(w, "width")?,
        height: dim_u16(h, "height")?,
        frame_count: dim_u16(t, "frame count")?,
        gop_size: opts.gop as u8,
        lambda_index,
        model_hash: model.hash(),
        crc32: 0,
    };
    let padded = pad_replicate(&video.frames, PAD_MULTIPLE)?;
    let mut starts = Vec::new();
    let mut s = 0;
    for len in header.gop_lengths() {
        starts.push((s, len));
        s += len;
    }
    let coded = par_map(starts, opts.threads, |(s, len)| {
        let x = padded.select_rows(s, len)?;
        let (c, recon) = model.encode_gop(&x)?;
        Ok((c.payload, c.y_bar, recon))
    })?;
    let payloads: Vec<GopPayload> = coded.iter().map(|c| c.0.clone()).collect();
    let bytes = pack(&header, &payloads)?;
    header.crc32 = Header::parse(&bytes)?.crc32;
    let recon = Tensor::concat_rows(&coded.iter().map(|c| &c.2).collect::<Vec<_>>())?;
    let recon = crop(&recon, h, w)?;
    let encode_secs = started.elapsed().as_secs_f64();

    if opts.verify {
        let (_, gops) = unpack(&bytes)?;
        let (lh, lw) = (padded.shape()[2] / DOWNSAMPLE, padded.shape()[3] / DOWNSAMPLE);
        let checked = par_map(gops.into_iter().zip(&coded).collect(), opts.threads, |(g, c)| {
            let (_, y_bar) = model.entropy_decode(&g, lh, lw)?;
            let same = y_bar.shape() == c.1.shape()
                && y_bar.data().iter().zip(c.1.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            Ok(same)
        })?;
        if let Some(i) = checked.iter().position(|ok| !ok) {
            return Err(Error::Bitstream(format!("verification failed: GOP {i} decodes to different latents")));
        }
    }

    let mut report = RateDistortionReport::from_videos(&video.frames, &recon)?;
    let bits: Vec<f64> = payloads.iter().flat_map(frame_bits).collect();
    report.set_rate(bytes.len(), &bits);
    report.encode_secs = Some(encode_secs);
    Ok((
        bytes,
        EncodeOutcome {
            header,
            segments: payloads.len(),
            report,
            reconstruction: recon,
        },
    ))
}

/// Decode a container with `model`, cropping to the original size.
pub fn decode_bytes(bytes: &[u8], model: &ModelSource, threads: usize) -> Result<DecodeOutcome> {
    let started = Instant::now();
    let (header, gops) = unpack(bytes)?;
    if header.preset != model.preset {
        return Err(Error::InvalidArgument(format!(
            "stream uses preset {}, model is {}",
            header.preset, model.preset
        )));
    }
    let m = model.build()?;
    if m.hash() != header.model_hash {
        return Err(Error::ModelHash {
            stream: header.model_hash,
            model: m.hash(),
        });
    }
    let (h, w) = (usize::from(header.height), usize::from(header.width));
    let (ph, pw) = (h.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE, w.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE);
    let parts = par_map(gops, threads, |g| m.decode_gop(&g, ph, pw))?;
    let frames = Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?;
    let frames = crop(&frames, h, w)?;
    Ok(DecodeOutcome {
        header,
        video: Video::new(frames)?,
        decode_secs: started.elapsed().as_secs_f64(),
    })
}

/// Read `input`, write the bitstream to `output`, return the report.
pub fn cmd_encode(input: &Path, output: &Path, opts: &EncodeOptions) -> Result<EncodeOutcome> {
    let video = Video::read(input)?;
    let (bytes, outcome) = encode_video(&video, opts)?;
    fs::write(output, bytes)?;
    Ok(outcome)
}

pub fn cmd_decode(input: &Path, output: &Path, model: &ModelSource, threads: usize) -> Result<DecodeOutcome> {
    let bytes = fs::read(input)?;
    let mut outcome = decode_bytes(&bytes, model, threads)?;
    outcome.video.framerate = (25, 1);
    outcome.video.write(output)?;
    Ok(outcome)
}

/// Distortion of `reconstruction` against `reference`; with a bitstream,
/// also its rate.
pub fn cmd_metrics(reference: &Path, reconstruction: &Path, bitstream: Option<&Path>) -> Result<RateDistortionReport> {
    let a = Video::read(reference)?;
    let b = Video::read(reconstruction)?;
    if a.frames.shape() != b.frames.shape() {
        return Err(Error::Video(format!(
            "dimension mismatch: {:?} vs {:?}",
            a.frames.shape(),
            b.frames.shape()
        )));
    }
    let mut report = RateDistortionReport::from_videos(&a.frames, &b.frames)?;
    if let Some(path) = bitstream {
        let bytes = fs::read(path)?;
        let (_, gops) = unpack(&bytes)?;
        let bits: Vec<f64> = gops.iter().flat_map(frame_bits).collect();
        if bits.len() != report.frames {
            return Err(Error::Video(format!("bitstream has {} frames, video {}", bits.len(), report.frames)));
        }
        report.set_rate(bytes.len(), &bits);
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub model: ModelSource,
    /// 1 for rate-distortion, 2 adds the perceptual and style terms.
    pub stage: u8,
    pub steps: usize,
    pub lambda_index: usize,
    pub clips: usize,
    pub clip_frames: usize,
    pub size: usize,
    pub max_speed: i32,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            model: ModelSource::default(),
            stage: 1,
            steps: 5000,
            lambda_index: 1,
            clips: 24,
            clip_frames: 8,
            size: 64,
            max_speed: 2,
            seed: 0,
        }
    }
}

/// Train on synthetic clips and save the checkpoint to `output`.
pub fn cmd_train(opts: &TrainOptions, output: &Path, log: impl FnMut(&TrainRecord)) -> Result<Vec<TrainRecord>> {
    check_lambda_index(opts.lambda_index)?;
    if opts.size == 0 || opts.size % PAD_MULTIPLE != 0 {
        return Err(Error::InvalidArgument(format!("clip size must be a multiple of {PAD_MULTIPLE}")));
    }
    let mut model = opts.model.build()?;
    let specs = random_specs(opts.clips, opts.clip_frames, opts.size, opts.max_speed, opts.seed);
    let data = make_synthetic_dataset(&specs, opts.seed.wrapping_add(1));
    let history = match opts.stage {
        1 => {
            let cfg = TrainConfig::stage1(opts.steps, opts.seed);
            train_stage1(&mut model, &data, LAMBDA_GRID[opts.lambda_index], &cfg, log)?
        }
        2 => {
            if opts.model.checkpoint.is_none() {
                return Err(Error::InvalidArgument("stage 2 starts from a stage-1 checkpoint".into()));
            }
            let cfg = TrainConfig::stage2(opts.steps, opts.seed);
            let fe = FeatureExtractor::new(opts.seed);
            let w = LossWeights::from_index(opts.lambda_index)?;
            train_stage2(&mut model, &data, &w, &fe, &cfg, log)?
        }
        s => return Err(Error::InvalidArgument(format!("stage {s} is not 1 or 2"))),
    };
    model.save(output)?;
    Ok(history)
}
