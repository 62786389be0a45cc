//! Invariant suite behind the `selftest` command.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{decode_gaussian, encode_gaussian};
use crate::codec::{CodecConfig, Model};
use crate::error::Result;
use crate::geom::scan::{forward_blocked, ScanDims, DEFAULT_BLOCK};
use crate::geom::{apply_transform, inverse_transform, scan_sequence, Cmm, ScanOrder};
use crate::locality::{diff_conv, DiffConvKind, RING};
use crate::nn::{Conv2d, LayerNorm, Linear};
use crate::tensor::gradcheck::{self, GradCheckConfig};
use crate::tensor::{ParamStore, Tape, Tensor};

/// Rewrites a 3x3 kernel of the given kind into a vanilla kernel.
pub type RewriteFn = fn(DiffConvKind, &[f64; 9]) -> [f64; 9];

#[derive(Clone, Copy, Debug)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Rewrite under test in the kernel-merge check.
    pub rewrite: RewriteFn,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            rewrite: |kind, k| kind.rewrite(k),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub secs: f64,
}

#[derive(Clone, Debug)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:<24} {:>7.2}s  {}", c.name, c.secs, c.detail)?;
        }
        let n = self.checks.iter().filter(|c| c.passed).count();
        write!(f, "{n}/{} checks passed", self.checks.len())
    }
}

fn run(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Check {
        name,
        passed,
        detail,
        secs: t.elapsed().as_secs_f64(),
    }
}

pub fn cmd_selftest() -> SelftestReport {
    run_selftest(&SelftestOptions::default())
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let s = opts.seed;
    SelftestReport {
        checks: vec![
            run("transform-reversibility", || transform_reversibility(s)),
            run("scan-order-oracle", scan_order_oracle),
            run("selective-scan", || selective_scan(s)),
            run("difference-constant", || difference_constant(s)),
            run("kernel-merge", || kernel_merge(s, opts.rewrite)),
            run("coder-round-trip", || coder_round_trip(s)),
            run("gradient-checks", || gradient_checks(s)),
            run("decoder-sufficiency", || decoder_sufficiency(s)),
        ],
    }
}

fn transform_reversibility(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..50 {
        let shape: Vec<usize> = (0..4).map(|_| rng.gen_range(1..6)).collect();
        let x = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
        for o in ScanOrder::ALL {
            let back = inverse_transform(&apply_transform(&x, o)?, o)?;
            if back != x {
                return Ok((false, format!("trial {trial} {o} {shape:?}")));
            }
        }
    }
    Ok((true, "50 shapes x 4 orders".into()))
}

fn scan_order_oracle() -> Result<(bool, String)> {
    let (t, h, w) = (3, 2, 2);
    let fst: Vec<(usize, usize)> = (0..t).flat_map(|f| (0..h * w).map(move |p| (f, p))).collect();
    let fts: Vec<(usize, usize)> = (0..h * w).flat_map(|p| (0..t).map(move |f| (f, p))).collect();
    let rev = |v: &[(usize, usize)]| v.iter().rev().copied().collect::<Vec<_>>();
    let ok = scan_sequence(t, h, w, ScanOrder::Fst)? == fst
        && scan_sequence(t, h, w, ScanOrder::Fts)? == fts
        && scan_sequence(t, h, w, ScanOrder::Bst)? == rev(&fst)
        && scan_sequence(t, h, w, ScanOrder::Bts)? == rev(&fts);
    Ok((ok, "T=3 H=2 W=2".into()))
}

/// Direct recurrence, one channel and state at a time.
fn naive_scan(dims: &ScanDims, u: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let ScanDims { len, dim, nstate } = *dims;
    let mut y = vec![0.0; len * dim];
    for ch in 0..dim {
        for n in 0..nstate {
            let mut h = 0.0;
            for t in 0..len {
                let dt = delta[t * dim + ch];
                h = (dt * a[ch * nstate + n]).exp() * h + dt * b[t * nstate + n] * u[t * dim + ch];
                y[t * dim + ch] += c[t * nstate + n] * h;
            }
        }
        for t in 0..len {
            y[t * dim + ch] += d[ch] * u[t * dim + ch];
        }
    }
    y
}

fn selective_scan(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dims = ScanDims {
            len: rng.gen_range(1..=256),
            dim: rng.gen_range(1..=4),
            nstate: rng.gen_range(1..=8),
        };
        let mut r = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
        let u = r(dims.len * dims.dim, -1.0, 1.0);
        let delta = r(dims.len * dims.dim, 0.001, 0.5);
        let a = r(dims.dim * dims.nstate, -4.0, -0.1);
        let b = r(dims.len * dims.nstate, -1.0, 1.0);
        let c = r(dims.len * dims.nstate, -1.0, 1.0);
        let d = r(dims.dim, -1.0, 1.0);
        let fast = forward_blocked(&dims, &u, &delta, &a, &b, &c, &d, DEFAULT_BLOCK);
        let slow = naive_scan(&dims, &u, &delta, &a, &b, &c, &d);
        let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let err = fast.iter().zip(&slow).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(err / scale);
    }
    Ok((worst < 1e-10, format!("max rel err {worst:.2e}")))
}

fn difference_constant(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = ParamStore::new();
    let mut worst: f64 = 0.0;
    for kind in DiffConvKind::ALL.into_iter().filter(|&k| k != DiffConvKind::Vanilla) {
        let mut tape = Tape::inference(&store);
        let v: f64 = rng.gen_range(-3.0..3.0);
        let x = tape.constant(Tensor::full(&[1, 6, 6, 2], v));
        let k = tape.constant(Tensor::from_fn(&[3, 3, 2], |_| rng.gen_range(-1.0..1.0)));
        let y = diff_conv(&mut tape, x, k, kind)?;
        let out = tape.value(y);
        for r in 1..5 {
            for col in 1..5 {
                for ch in 0..2 {
                    worst = worst.max(out.data()[(r * 6 + col) * 2 + ch].abs());
                }
            }
        }
    }
    Ok((worst < 1e-12, format!("max interior |y| {worst:.2e}")))
}

/// Difference-convolution response at one position from its zero-padded
/// neighbourhood `p` (row-major taps).
pub fn direct_difference(kind: DiffConvKind, w: &[f64; 9], p: &[f64; 9]) -> f64 {
    match kind {
        DiffConvKind::Vanilla => (0..9).map(|i| w[i] * p[i]).sum(),
        DiffConvKind::Central => (0..9).map(|i| w[i] * (p[i] - p[4])).sum(),
        DiffConvKind::Horizontal => (0..3)
            .map(|r| w[3 * r] * (p[3 * r] - p[3 * r + 1]) + w[3 * r + 2] * (p[3 * r + 2] - p[3 * r + 1]))
            .sum(),
        DiffConvKind::Vertical => (0..3)
            .map(|c| w[c] * (p[c] - p[3 + c]) + w[6 + c] * (p[6 + c] - p[3 + c]))
            .sum(),
        DiffConvKind::Angular => (0..8).map(|j| w[RING[j]] * (p[RING[j]] - p[RING[(j + 1) % 8]])).sum(),
    }
}

fn neighbourhood(img: &[f64], h: usize, w: usize, r: usize, c: usize) -> [f64; 9] {
    let mut p = [0.0; 9];
    for dr in 0..3 {
        for dc in 0..3 {
            let (rr, cc) = (r as isize + dr as isize - 1, c as isize + dc as isize - 1);
            if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                p[dr * 3 + dc] = img[rr as usize * w + cc as usize];
            }
        }
    }
    p
}

fn kernel_merge(seed: u64, rewrite: RewriteFn) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (7, 5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let img: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kernels: Vec<[f64; 9]> = (0..5).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
        let mut merged = [0.0; 9];
        for (kind, k) in DiffConvKind::ALL.iter().zip(&kernels) {
            let r = rewrite(*kind, k);
            for i in 0..9 {
                merged[i] += r[i];
            }
        }
        for r in 0..h {
            for c in 0..w {
                let p = neighbourhood(&img, h, w, r, c);
                let branches: f64 = DiffConvKind::ALL
                    .iter()
                    .zip(&kernels)
                    .map(|(kind, k)| direct_difference(*kind, k, &p))
                    .sum();
                let single: f64 = (0..9).map(|i| merged[i] * p[i]).sum();
                worst = worst.max((branches - single).abs() / branches.abs().max(1e-12));
            }
        }
    }
    Ok((worst < 1e-10, format!("max rel err {worst:.2e}")))
}

fn coder_round_trip(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 20_000;
    let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
    let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..30.0)).collect();
    let sym: Vec<i32> = mu
        .iter()
        .zip(&sigma)
        .map(|(m, s)| {
            if rng.gen_bool(0.01) {
                rng.gen_range(-30_000..30_000)
            } else {
                (m + s * rng.gen_range(-3.0..3.0)).round() as i32
            }
        })
        .collect();
    let bytes = encode_gaussian(&sym, &mu, &sigma)?;
    let back = decode_gaussian(&bytes, &mu, &sigma)?;
    Ok((back == sym, format!("{n} symbols in {} bytes", bytes.len())))
}

fn gradient_checks(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GradCheckConfig {
        probes: 30,
        seed,
        ..GradCheckConfig::default()
    };
    let mut rand_t = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let x = rand_t(&[2, 4, 4, 4]);
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();

    let mut store = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(seed);
    let lin = Linear::new(&mut store, &mut prng, "lin", 4, 3, true)?;
    let conv = Conv2d::new(&mut store, &mut prng, "conv", 4, 2, 3, 2, true)?;
    let ln = LayerNorm::new(&mut store, &mut prng, "ln", 4)?;
    let cmm = Cmm::new(&mut store, &mut prng, "cmm", 4, 2)?;
    let layers: Vec<(&str, Box<dyn Fn(&mut Tape, crate::tensor::Var) -> Result<crate::tensor::Var>>)> = vec![
        ("linear", Box::new(|t, v| lin.forward(t, v))),
        ("conv", Box::new(|t, v| conv.forward(t, v))),
        ("layernorm", Box::new(|t, v| ln.forward(t, v))),
        ("gelu", Box::new(|t, v| t.gelu(v))),
        ("cmm", Box::new(|t, v| cmm.forward(t, v))),
    ];
    for (name, f) in &layers {
        let rep = gradcheck::check(&store, std::slice::from_ref(&x), cfg, |t, v| f(t, v[0]))?;
        worst = worst.max(rep.max_rel_err);
        names.push(*name);
    }
    Ok((worst < 1e-4, format!("{} layers, max rel err {worst:.2e}", names.len())))
}

fn decoder_sufficiency(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(CodecConfig::tiny(), seed)?;
    let frames = Tensor::from_fn(&[3, 3, 64, 64], |_| rng.gen_range(0.0..1.0));
    let (coded, recon) = model.encode_gop(&frames)?;
    let (_, y_bar) = model.entropy_decode(&coded.payload, 4, 4)?;
    let decoded = model.decode_gop(&coded.payload, 64, 64)?;
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let ok = bits(&y_bar) == bits(&coded.y_bar) && bits(&decoded) == bits(&recon);
    Ok((ok, format!("{} payload bytes", coded.payload.byte_len())))
}
