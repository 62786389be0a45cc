//! Difference convolutions, the hybrid convolution block (HCB) and the
//! locality refinement feed-forward network (LRFFN).
//!
//! Every difference convolution is a fixed linear rewrite of a 3x3 kernel
//! into an equivalent vanilla kernel, so a difference branch costs one
//! depthwise convolution. Kernel taps are indexed row-major:
//!
//! ```text
//! 0 1 2
//! 3 4 5
//! 6 7 8
//! ```
//!
//! - `Central`: `sum_i w_i (x_i - x_4)` over all nine taps.
//! - `Horizontal`: the six horizontally adjacent pairs, each outer column tap
//!   against the middle tap of its row: `w_{r,0}(x_{r,0}-x_{r,1}) + w_{r,2}(x_{r,2}-x_{r,1})`.
//! - `Vertical`: the same on columns: `w_{0,c}(x_{0,c}-x_{1,c}) + w_{2,c}(x_{2,c}-x_{1,c})`.
//! - `Angular`: the eight clockwise ring differences `w_i (x_i - x_next(i))`
//!   with ring `0 1 2 5 8 7 6 3`.
//! - `Vanilla`: plain convolution.
//!
//! Weights a rewrite does not read (the middle column for `Horizontal`, the
//! centre for `Angular`) receive zero gradient.

use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::nn::Linear;
use crate::tensor::{Init, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiffConvKind {
    Central,
    Vertical,
    Horizontal,
    Angular,
    Vanilla,
}

pub const RING: [usize; 8] = [0, 1, 2, 5, 8, 7, 6, 3];

impl DiffConvKind {
    pub const ALL: [DiffConvKind; 5] = [
        DiffConvKind::Central,
        DiffConvKind::Vertical,
        DiffConvKind::Horizontal,
        DiffConvKind::Angular,
        DiffConvKind::Vanilla,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            DiffConvKind::Central => "cd",
            DiffConvKind::Vertical => "vd",
            DiffConvKind::Horizontal => "hd",
            DiffConvKind::Angular => "ad",
            DiffConvKind::Vanilla => "vanilla",
        }
    }

    /// Matrix `M` with `rewritten = M * kernel` (taps as above).
    pub fn rewrite_matrix(self) -> [[f64; 9]; 9] {
        let mut m = [[0.0; 9]; 9];
        match self {
            DiffConvKind::Vanilla => {
                for (p, row) in m.iter_mut().enumerate() {
                    row[p] = 1.0;
                }
            }
            DiffConvKind::Central => {
                for p in 0..9 {
                    if p != 4 {
                        m[p][p] = 1.0;
                        m[4][p] = -1.0;
                    }
                }
            }
            DiffConvKind::Horizontal => {
                for r in 0..3 {
                    let (l, c, rt) = (3 * r, 3 * r + 1, 3 * r + 2);
                    m[l][l] = 1.0;
                    m[rt][rt] = 1.0;
                    m[c][l] = -1.0;
                    m[c][rt] = -1.0;
                }
            }
            DiffConvKind::Vertical => {
                for c in 0..3 {
                    let (t, mid, b) = (c, 3 + c, 6 + c);
                    m[t][t] = 1.0;
                    m[b][b] = 1.0;
                    m[mid][t] = -1.0;
                    m[mid][b] = -1.0;
                }
            }
            DiffConvKind::Angular => {
                for (i, &p) in RING.iter().enumerate() {
                    let prev = RING[(i + 7) % 8];
                    m[p][p] += 1.0;
                    m[p][prev] -= 1.0;
                }
            }
        }
        m
    }

    /// Rewrite one 3x3 kernel (row-major taps).
    pub fn rewrite(self, k: &[f64; 9]) -> [f64; 9] {
        let m = self.rewrite_matrix();
        let mut out = [0.0; 9];
        for p in 0..9 {
            out[p] = (0..9).map(|q| m[p][q] * k[q]).sum();
        }
        out
    }
}

fn check_kernel(tape: &Tape, k: Var) -> Result<()> {
    let s = tape.shape(k);
    if s.len() != 3 || s[0] != 3 || s[1] != 3 {
        return Err(shape_err("diff_conv", format!("expected a 3x3 depthwise kernel, got {s:?}")));
    }
    Ok(())
}

/// Rewritten `(3, 3, C)` kernel on the tape.
pub fn rewritten_kernel(tape: &mut Tape, k: Var, kind: DiffConvKind) -> Result<Var> {
    check_kernel(tape, k)?;
    if kind == DiffConvKind::Vanilla {
        return Ok(k);
    }
    tape.kernel_map(k, &kind.rewrite_matrix())
}

/// Depthwise difference convolution (stride 1, padding 1) of `(N, H, W, C)`.
pub fn diff_conv(tape: &mut Tape, x: Var, k: Var, kind: DiffConvKind) -> Result<Var> {
    let kr = rewritten_kernel(tape, k, kind)?;
    tape.conv2d(x, kr, 1, 1, true)
}

/// Five parallel depthwise branches, summed, then a pointwise mix.
#[derive(Clone, Debug)]
pub struct Hcb {
    pub channels: usize,
    /// Kernels in [`DiffConvKind::ALL`] order, each `(3, 3, C)`.
    pub kernels: [ParamId; 5],
    pub mix: Linear,
}

impl Hcb {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Result<Self> {
        let mut kernels = Vec::with_capacity(5);
        for kind in DiffConvKind::ALL {
            kernels.push(store.create(
                &format!("{name}.{}", kind.tag()),
                &[3, 3, channels],
                Init::Normal { fan_in: 9 * 5, gain: 1.0 },
                rng,
            )?);
        }
        Ok(Self {
            channels,
            kernels: kernels.try_into().expect("five kinds"),
            mix: Linear::new(store, rng, &format!("{name}.mix"), channels, channels, true)?,
        })
    }

    /// Sum of the five branch outputs, before the pointwise mix.
    pub fn branch_sum(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (kind, &id) in DiffConvKind::ALL.iter().zip(&self.kernels) {
            let k = tape.param(id);
            let y = diff_conv(tape, x, k, *kind)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        Ok(acc.expect("five branches"))
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = self.branch_sum(tape, x)?;
        self.mix.forward(tape, s)
    }

    /// The single vanilla kernel equal to the sum of the five rewrites.
    pub fn merged_kernel(&self, tape: &mut Tape) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (kind, &id) in DiffConvKind::ALL.iter().zip(&self.kernels) {
            let k = tape.param(id);
            let r = rewritten_kernel(tape, k, *kind)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, r)?,
                None => r,
            });
        }
        Ok(acc.expect("five branches"))
    }

    /// Same map as [`Hcb::forward`] through one merged convolution.
    pub fn forward_merged(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let k = self.merged_kernel(tape)?;
        let s = tape.conv2d(x, k, 1, 1, true)?;
        self.mix.forward(tape, s)
    }
}

/// `E1, E2 = split(gelu(Linear(E)))`, `out = Linear(gelu(HCB(E1)) * E2)`.
#[derive(Clone, Debug)]
pub struct Lrffn {
    pub channels: usize,
    pub hidden: usize,
    pub expand: Linear,
    pub hcb: Hcb,
    pub project: Linear,
}

impl Lrffn {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize, hidden: usize) -> Result<Self> {
        if hidden == 0 || hidden % 2 != 0 {
            return Err(shape_err("lrffn", format!("expanded width {hidden} must be even")));
        }
        let half = hidden / 2;
        Ok(Self {
            channels,
            hidden,
            expand: Linear::new(store, rng, &format!("{name}.expand"), channels, hidden, true)?,
            hcb: Hcb::new(store, rng, &format!("{name}.hcb"), half)?,
            project: Linear::new(store, rng, &format!("{name}.project"), half, channels, true)?,
        })
    }

    /// `e` is `(N, H, W, C)`.
    pub fn forward(&self, tape: &mut Tape, e: Var) -> Result<Var> {
        let h = self.expand.forward(tape, e)?;
        let h = tape.gelu(h)?;
        let parts = tape.split_channels(h, 2)?;
        let local = self.hcb.forward(tape, parts[0])?;
        let local = tape.gelu(local)?;
        let gated = tape.mul(local, parts[1])?;
        self.project.forward(tape, gated)
    }
}
