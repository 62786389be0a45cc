//! PSNR, MS-SSIM and the rate-distortion report.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PSNR_CAP: f64 = 99.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `10 log10(1 / mse)` for unit-interval signals, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    psnr_from_mse(mse(a, b))
}

/// A single-channel image, row-major.
#[derive(Clone, Debug)]
pub struct Plane<'a> {
    pub data: &'a [f64],
    pub height: usize,
    pub width: usize,
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering.
fn filter(img: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|i| g[i] * img[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| g[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Window length used for an `h x w` image: 11, or the largest odd size
/// that fits.
pub fn window_for(h: usize, w: usize) -> usize {
    let m = SSIM_WINDOW.min(h).min(w);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Mean SSIM and mean contrast-structure term of two planes.
pub fn ssim_components(a: &Plane, b: &Plane) -> (f64, f64) {
    let (h, w) = (a.height, a.width);
    let g = gaussian_window(window_for(h, w), SSIM_SIGMA);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let (mu_a, oh, ow) = filter(a.data, h, w, &g);
    let (mu_b, _, _) = filter(b.data, h, w, &g);
    let (aa, _, _) = filter(&prod(a.data, a.data), h, w, &g);
    let (bb, _, _) = filter(&prod(b.data, b.data), h, w, &g);
    let (ab, _, _) = filter(&prod(a.data, b.data), h, w, &g);
    let n = (oh * ow) as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let csv = (2.0 * cov + c2) / (va + vb + c2);
        cs += csv;
        ssim += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * csv;
    }
    (ssim / n, cs / n)
}

fn downsample(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let i = 2 * r * w + 2 * c;
            out[r * ow + c] = 0.25 * (img[i] + img[i + 1] + img[i + w] + img[i + w + 1]);
        }
    }
    (out, oh, ow)
}

/// Five-scale MS-SSIM of two planes with 2x2 average pooling between scales.
/// Negative terms are clamped to zero before exponentiation.
pub fn ms_ssim_plane(a: &Plane, b: &Plane) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::InvalidArgument("ms-ssim planes differ in size".into()));
    }
    if a.height < 16 || a.width < 16 {
        return Err(Error::InvalidArgument(format!(
            "ms-ssim needs at least 16x16, got {}x{}",
            a.height, a.width
        )));
    }
    let (mut x, mut y) = (a.data.to_vec(), b.data.to_vec());
    let (mut h, mut w) = (a.height, a.width);
    let mut out = 1.0;
    for (scale, &wt) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_components(&Plane { data: &x, height: h, width: w }, &Plane { data: &y, height: h, width: w });
        if scale + 1 == MS_SSIM_WEIGHTS.len() {
            out *= s.max(0.0).powf(wt);
        } else {
            out *= cs.max(0.0).powf(wt);
            let (nx, nh, nw) = downsample(&x, h, w);
            let (ny, _, _) = downsample(&y, h, w);
            x = nx;
            y = ny;
            h = nh;
            w = nw;
        }
    }
    Ok(out)
}

/// MS-SSIM of one `(3, H, W)` frame, averaged over channels.
pub fn ms_ssim_frame(a: &[f64], b: &[f64], height: usize, width: usize) -> Result<f64> {
    let plane = height * width;
    let mut acc = 0.0;
    for c in 0..3 {
        let r = c * plane..(c + 1) * plane;
        acc += ms_ssim_plane(
            &Plane { data: &a[r.clone()], height, width },
            &Plane { data: &b[r], height, width },
        )?;
    }
    Ok(acc / 3.0)
}

/// Rate and quality of a coded video, on original-resolution frames.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateDistortionReport {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Whole bitstream file size.
    pub total_bytes: usize,
    /// Range-coded bits of each frame (its slices plus an equal share of its
    /// GOP's hyper-latent) per pixel. Excludes container overhead.
    pub frame_bpp: Vec<f64>,
    pub frame_psnr: Vec<f64>,
    pub frame_ms_ssim: Vec<f64>,
    /// `8 * total_bytes / (frames * width * height)`.
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub encode_secs: Option<f64>,
    pub decode_secs: Option<f64>,
}

impl RateDistortionReport {
    /// Per-frame distortion of `reconstruction` against `reference`, both `(T, 3, H, W)`.
    pub fn from_videos(reference: &Tensor, reconstruction: &Tensor) -> Result<Self> {
        let s = reference.shape();
        if s != reconstruction.shape() || s.len() != 4 || s[1] != 3 {
            return Err(Error::InvalidArgument(format!(
                "videos differ in shape: {s:?} vs {:?}",
                reconstruction.shape()
            )));
        }
        let (t, h, w) = (s[0], s[2], s[3]);
        let n = 3 * h * w;
        let mut r = Self {
            frames: t,
            width: w,
            height: h,
            ..Self::default()
        };
        for i in 0..t {
            let a = &reference.data()[i * n..(i + 1) * n];
            let b = &reconstruction.data()[i * n..(i + 1) * n];
            r.frame_psnr.push(psnr(a, b));
            r.frame_ms_ssim.push(ms_ssim_frame(a, b, h, w)?);
        }
        r.psnr = mean(&r.frame_psnr);
        r.ms_ssim = mean(&r.frame_ms_ssim);
        Ok(r)
    }

    /// Fill in the rate fields from the file size and per-frame coded bits.
    pub fn set_rate(&mut self, total_bytes: usize, frame_bits: &[f64]) {
        let pixels = (self.width * self.height) as f64;
        self.total_bytes = total_bytes;
        self.bpp = 8.0 * total_bytes as f64 / (self.frames as f64 * pixels);
        self.frame_bpp = frame_bits.iter().map(|b| b / pixels).collect();
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl fmt::Display for RateDistortionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames {} size {}x{} bytes {}", self.frames, self.width, self.height, self.total_bytes)?;
        writeln!(f, "mean bpp {:.6} psnr {:.4} dB ms-ssim {:.6}", self.bpp, self.psnr, self.ms_ssim)?;
        for i in 0..self.frames {
            let bpp = self.frame_bpp.get(i).map_or("-".to_string(), |b| format!("{b:.6}"));
            writeln!(
                f,
                "frame {i:>4} bpp {bpp} psnr {:.4} ms-ssim {:.6}",
                self.frame_psnr.get(i).copied().unwrap_or(f64::NAN),
                self.frame_ms_ssim.get(i).copied().unwrap_or(f64::NAN)
            )?;
        }
        if let Some(s) = self.encode_secs {
            writeln!(f, "encode {s:.3} s")?;
        }
        if let Some(s) = self.decode_secs {
            writeln!(f, "decode {s:.3} s")?;
        }
        Ok(())
    }
}
