//! Rate-distortion and perceptual/style losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::entropy::total_bits;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Tape, Tensor, Unary, Var};

/// Rate-distortion tradeoffs selectable by index.
pub const LAMBDA_GRID: [f64; 3] = [128.0, 256.0, 512.0];
pub const DEFAULT_LAMBDA_PER: f64 = 1.0;
pub const DEFAULT_LAMBDA_STY: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub lambda_per: f64,
    pub lambda_sty: f64,
}

impl LossWeights {
    pub fn new(lambda: f64, lambda_per: f64, lambda_sty: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda_per >= 0.0 && lambda_sty >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative: {lambda}, {lambda_per}, {lambda_sty}"
            )));
        }
        Ok(Self {
            lambda,
            lambda_per,
            lambda_sty,
        })
    }

    /// `lambda_index` into [`LAMBDA_GRID`] with the default perceptual and
    /// style weights.
    pub fn from_index(lambda_index: usize) -> Result<Self> {
        let lambda = *LAMBDA_GRID
            .get(lambda_index)
            .ok_or_else(|| Error::InvalidArgument(format!("lambda index {lambda_index} not in 0..3")))?;
        Self::new(lambda, DEFAULT_LAMBDA_PER, DEFAULT_LAMBDA_STY)
    }

    /// Weights with the perceptual and style terms off.
    pub fn rd_only(lambda: f64) -> Result<Self> {
        Self::new(lambda, 0.0, 0.0)
    }
}

/// Loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RdVars {
    pub total: Var,
    /// Latent rate summed over frames, bits per pixel of each frame.
    pub rate_y: Var,
    pub rate_z: Var,
    /// Per-frame MSE summed over frames.
    pub distortion: Var,
}

/// `sum_i R(y_i) + R(z_i) + lambda * MSE(x_i, x_hat_i)`; rates are bits per
/// pixel of one frame, `pixels` is `H * W`.
pub fn rd_loss(
    tape: &mut Tape,
    x: Var,
    x_hat: Var,
    likelihood_y: &[Var],
    likelihood_z: Var,
    pixels: usize,
    lambda: f64,
) -> Result<RdVars> {
    let shape = tape.shape(x).to_vec();
    if tape.shape(x_hat) != shape.as_slice() || shape.is_empty() {
        return Err(shape_err("rd_loss", format!("{shape:?} vs {:?}", tape.shape(x_hat))));
    }
    let frames = shape[0];
    let per_frame = tape.value(x).len() / frames;
    let bits_y = total_bits(tape, likelihood_y)?;
    let rate_y = tape.scale(bits_y, 1.0 / pixels as f64)?;
    let bits_z = total_bits(tape, &[likelihood_z])?;
    let rate_z = tape.scale(bits_z, 1.0 / pixels as f64)?;
    let d = tape.sub(x_hat, x)?;
    let d2 = tape.unary(d, Unary::Square)?;
    let sq = tape.sum(d2)?;
    let distortion = tape.scale(sq, 1.0 / per_frame as f64)?;
    let rate = tape.add(rate_y, rate_z)?;
    let weighted = tape.scale(distortion, lambda)?;
    let total = tape.add(rate, weighted)?;
    Ok(RdVars {
        total,
        rate_y,
        rate_z,
        distortion,
    })
}

/// Frozen random convolution stack standing in for a pretrained feature
/// network. Three stages, each a 3x3 convolution and GeLU; the second and
/// third halve the resolution.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    /// `(kernel (3, 3, cin, cout), stride)` per stage.
    pub stages: Vec<(Tensor, usize)>,
}

impl FeatureExtractor {
    pub const WIDTHS: [usize; 3] = [8, 16, 32];

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut stages = Vec::new();
        for (i, &c) in Self::WIDTHS.iter().enumerate() {
            let std = (2.0 / (9 * cin) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let k = Tensor::from_fn(&[3, 3, cin, c], |_| normal.sample(&mut rng));
            stages.push((k, if i == 0 { 1 } else { 2 }));
            cin = c;
        }
        Self { stages }
    }

    /// Features of `(T, H, W, 3)` frames at every stage.
    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for (k, stride) in &self.stages {
            let kv = tape.constant(k.clone());
            h = tape.conv2d(h, kv, *stride, 1, false)?;
            h = tape.gelu(h)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Channel Gram matrix of every frame of `(T, H, W, C)`, normalized by the
/// pixel count: `(T, C, C)`.
pub fn gram(tape: &mut Tape, f: Var) -> Result<Var> {
    let s = tape.shape(f).to_vec();
    if s.len() != 4 {
        return Err(shape_err("gram", format!("{s:?}")));
    }
    let n = s[1] * s[2];
    let flat = tape.reshape(f, &[s[0], n, s[3]])?;
    let g = tape.matmul(flat, flat, true, false)?;
    tape.scale(g, 1.0 / n as f64)
}

/// Perceptual and style terms over frames and extractor stages.
#[derive(Clone, Copy, Debug)]
pub struct PerceptualVars {
    pub perceptual: Var,
    pub style: Var,
}

/// `sum_i sum_k ||E_k(x_hat_i) - E_k(x_i)||_2 / sqrt(n_k)` and
/// `sum_i sum_k mean |G(E_k(x_hat_i)) - G(E_k(x_i))|` for `(T, H, W, 3)` frames.
pub fn perceptual_style_terms(tape: &mut Tape, x: Var, x_hat: Var, fe: &FeatureExtractor) -> Result<PerceptualVars> {
    let frames = tape.shape(x)[0];
    let fx = fe.features(tape, x)?;
    let fy = fe.features(tape, x_hat)?;
    let mut per: Vec<Var> = Vec::new();
    let mut sty: Vec<Var> = Vec::new();
    for (a, b) in fx.into_iter().zip(fy) {
        let gx = gram(tape, a)?;
        let gy = gram(tape, b)?;
        for t in 0..frames {
            let at = tape.select_rows(a, t, 1)?;
            let bt = tape.select_rows(b, t, 1)?;
            let d = tape.sub(bt, at)?;
            let n = tape.value(d).len() as f64;
            let d2 = tape.unary(d, Unary::Square)?;
            let ss = tape.sum(d2)?;
            let norm = tape.unary(ss, Unary::Sqrt)?;
            per.push(tape.scale(norm, 1.0 / n.sqrt())?);

            let gxt = tape.select_rows(gx, t, 1)?;
            let gyt = tape.select_rows(gy, t, 1)?;
            let dg = tape.sub(gyt, gxt)?;
            let adg = tape.unary(dg, Unary::Abs)?;
            sty.push(tape.mean(adg)?);
        }
    }
    let perceptual = sum_vars(tape, &per)?;
    let style = sum_vars(tape, &sty)?;
    Ok(PerceptualVars { perceptual, style })
}

fn sum_vars(tape: &mut Tape, vs: &[Var]) -> Result<Var> {
    let mut acc = *vs.first().ok_or_else(|| Error::InvalidArgument("empty sum".into()))?;
    for &v in &vs[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// `lambda_per * perceptual + lambda_sty * style`.
pub fn perceptual_style_loss(tape: &mut Tape, x: Var, x_hat: Var, fe: &FeatureExtractor, w: &LossWeights) -> Result<(Var, PerceptualVars)> {
    let terms = perceptual_style_terms(tape, x, x_hat, fe)?;
    let p = tape.scale(terms.perceptual, w.lambda_per)?;
    let s = tape.scale(terms.style, w.lambda_sty)?;
    Ok((tape.add(p, s)?, terms))
}
