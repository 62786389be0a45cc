#![allow(dead_code)]

use gtvc::codec::{CodecConfig, Evss};
use gtvc::entropy::cgn::{Cgn, WindowAttention};
use gtvc::entropy::hyper::{HyperAnalysis, HyperSynthesis};
use gtvc::entropy::motion::{align, MotionEstimator};
use gtvc::entropy::slice::SliceNet;
use gtvc::geom::{Cmm, Gtmb, ScanOrder, SsmParams};
use gtvc::locality::{Hcb, Lrffn};
use gtvc::nn::{Conv2d, LayerNorm, Linear, ResBlock};
use gtvc::tensor::gradcheck::{check, GradCheckConfig, GradCheckReport};
use gtvc::tensor::{ParamStore, Tape, Tensor, Unary, Var};
use gtvc::train::{perceptual_style_loss, rd_loss, FeatureExtractor, LossWeights};
use gtvc::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_PROBES: usize = 50;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Small widths so every entropy-model layer can be finite-differenced.
pub fn small_config() -> CodecConfig {
    CodecConfig {
        stage_channels: [4, 4, 4, 4],
        latent_channels: 10,
        hyper_channels: 6,
        hyper_latent_channels: 4,
        slice_hidden: 6,
        motion_channels: 6,
        condition_channels: 6,
        attention_window: 2,
        state_dim: 3,
        ..CodecConfig::tiny()
    }
}

/// Add uniform noise to every parameter, so zero-initialized tails carry
/// gradient too.
pub fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng, amount: f64) {
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += rng.gen_range(-amount..amount);
        }
    }
}

fn cfg(seed: u64) -> GradCheckConfig {
    GradCheckConfig {
        probes: GRAD_PROBES,
        seed,
        ..GradCheckConfig::default()
    }
}

type Layer = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One gradient check per layer kind: `(name, report)`.
pub fn gradient_suite(seed: u64) -> Vec<(String, GradCheckReport)> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let sc = small_config();
    let feat = uniform(&mut r, &[2, 4, 4, 4], -1.0, 1.0);
    // scan blocks normalize over half their width; keep that above two
    let wide = uniform(&mut r, &[2, 3, 3, 8], -1.0, 1.0);
    let lat = uniform(&mut r, &[1, 4, 4, 10], -2.0, 2.0);
    let img = uniform(&mut r, &[2, 16, 16, 3], 0.0, 1.0);
    let img_hat = uniform(&mut r, &[2, 16, 16, 3], 0.0, 1.0);

    let lin = Linear::new(&mut store, &mut r, "lin", 4, 3, true).unwrap();
    let conv = Conv2d::new(&mut store, &mut r, "conv", 4, 3, 3, 1, true).unwrap();
    let conv_s2 = Conv2d::new(&mut store, &mut r, "conv_s2", 4, 3, 3, 2, true).unwrap();
    let dw = Conv2d::depthwise(&mut store, &mut r, "dw", 4, true).unwrap();
    let ln = LayerNorm::new(&mut store, &mut r, "ln", 4).unwrap();
    let res = ResBlock::new(&mut store, &mut r, "res", 4).unwrap();
    let ssm = SsmParams::new(&mut store, &mut r, "ssm", 4, 3).unwrap();
    let gtmb = Gtmb::new(&mut store, &mut r, "gtmb", 8, 3, ScanOrder::Fts).unwrap();
    let cmm = Cmm::new(&mut store, &mut r, "cmm", 8, 3).unwrap();
    let hcb = Hcb::new(&mut store, &mut r, "hcb", 4).unwrap();
    let lrffn = Lrffn::new(&mut store, &mut r, "lrffn", 8, 16).unwrap();
    let evss = Evss::new(&mut store, &mut r, "evss", 8, 3, 2).unwrap();
    let attn = WindowAttention::new(&mut store, &mut r, "attn", 4, 2).unwrap();
    let cgn = Cgn::new(&mut store, &mut r, &sc).unwrap();
    let motion = MotionEstimator::new(&mut store, &mut r, &sc).unwrap();
    let h_a = HyperAnalysis::new(&mut store, &mut r, &sc).unwrap();
    let h_s = HyperSynthesis::new(&mut store, &mut r, &sc).unwrap();
    let slice = SliceNet::new(&mut store, &mut r, &sc, 2).unwrap();
    jitter(&mut store, &mut r, 0.1);
    let fe = FeatureExtractor::new(seed);

    let mut cases: Vec<(&str, Vec<Tensor>, Layer)> = vec![
        ("linear", vec![feat.clone()], Box::new(move |t, v| lin.forward(t, v[0]))),
        ("conv", vec![feat.clone()], Box::new(move |t, v| conv.forward(t, v[0]))),
        ("conv_stride2", vec![feat.clone()], Box::new(move |t, v| conv_s2.forward(t, v[0]))),
        ("conv_depthwise", vec![feat.clone()], Box::new(move |t, v| dw.forward(t, v[0]))),
        ("layernorm", vec![feat.clone()], Box::new(move |t, v| ln.forward(t, v[0]))),
        ("resblock", vec![feat.clone()], Box::new(move |t, v| res.forward(t, v[0]))),
    ];
    for (name, f, lo, hi) in [
        ("silu", Unary::Silu, -2.0, 2.0),
        ("gelu", Unary::Gelu, -2.0, 2.0),
        ("softplus", Unary::Softplus, -2.0, 2.0),
        ("sigmoid", Unary::Sigmoid, -2.0, 2.0),
        ("exp", Unary::Exp, -2.0, 2.0),
        ("log", Unary::Log, 0.2, 2.0),
        ("sqrt", Unary::Sqrt, 0.2, 2.0),
        ("square", Unary::Square, -2.0, 2.0),
        ("abs", Unary::Abs, 0.2, 2.0),
        ("neg", Unary::Neg, -2.0, 2.0),
    ] {
        let x = uniform(&mut r, &[3, 5], lo, hi);
        cases.push((name, vec![x], Box::new(move |t, v| t.unary(v[0], f))));
    }
    let m1 = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
    let m2 = uniform(&mut r, &[2, 5, 4], -1.0, 1.0);
    cases.push(("softmax", vec![m1.clone()], Box::new(|t, v| t.softmax(v[0]))));
    cases.push(("matmul", vec![m1, m2], Box::new(|t, v| t.matmul(v[0], v[1], false, true))));
    cases.push((
        "selective_scan",
        vec![uniform(&mut r, &[12, 4], -1.0, 1.0)],
        Box::new(move |t, v| ssm.forward(t, v[0])),
    ));
    cases.push(("gtmb", vec![wide.clone()], Box::new(move |t, v| gtmb.forward(t, v[0]))));
    cases.push(("cmm", vec![wide.clone()], Box::new(move |t, v| cmm.forward(t, v[0]))));
    cases.push(("hcb", vec![feat.clone()], Box::new(move |t, v| hcb.forward(t, v[0]))));
    cases.push(("lrffn", vec![wide.clone()], Box::new(move |t, v| lrffn.forward(t, v[0]))));
    cases.push(("evss", vec![wide.clone()], Box::new(move |t, v| evss.forward(t, v[0]))));
    cases.push(("window_attention", vec![feat.clone()], Box::new(move |t, v| attn.forward(t, v[0]))));
    cases.push((
        "cgn",
        vec![lat.clone(), uniform(&mut r, &[1, 4, 4, 10], -2.0, 2.0), uniform(&mut r, &[1, 4, 4, 10], -2.0, 2.0)],
        Box::new(move |t, v| cgn.forward(t, v[0], v[1], v[2])),
    ));
    let flow = uniform(&mut r, &[2, 4, 4, 2], -0.9, 0.9);
    cases.push(("warp", vec![feat.clone(), flow], Box::new(|t, v| align(t, v[0], v[1]))));
    cases.push((
        "motion",
        vec![lat.clone(), uniform(&mut r, &[1, 4, 4, 10], -2.0, 2.0)],
        Box::new(move |t, v| motion.estimate(t, v[0], v[1])),
    ));
    cases.push(("hyper_analysis", vec![lat.clone()], Box::new(move |t, v| h_a.forward(t, v[0]))));
    cases.push((
        "hyper_synthesis",
        vec![uniform(&mut r, &[1, 1, 1, 4], -1.0, 1.0)],
        Box::new(move |t, v| {
            let (m, s) = h_s.forward(t, v[0])?;
            t.concat_channels(&[m, s])
        }),
    ));
    cases.push((
        "slice_net",
        vec![
            uniform(&mut r, &[1, 4, 4, 10], -1.0, 1.0),
            uniform(&mut r, &[1, 4, 4, 10], 0.5, 2.0),
            uniform(&mut r, &[1, 4, 4, 2], -1.0, 1.0),
            uniform(&mut r, &[1, 4, 4, 2], -1.0, 1.0),
            uniform(&mut r, &[1, 4, 4, 2], -1.0, 1.0),
        ],
        Box::new(move |t, v| {
            let p = slice.forward(t, v[0], v[1], &[v[2], v[3]], v[4])?;
            t.concat_channels(&[p.mu, p.sigma, p.residual])
        }),
    ));
    cases.push((
        "gaussian_likelihood",
        vec![
            uniform(&mut r, &[20], -2.0, 2.0),
            uniform(&mut r, &[20], -1.0, 1.0),
            uniform(&mut r, &[20], 0.5, 2.0),
        ],
        Box::new(|t, v| t.gaussian_likelihood(v[0], v[1], v[2], 1e-9)),
    ));
    cases.push((
        "rd_loss",
        vec![
            img.clone(),
            img_hat.clone(),
            uniform(&mut r, &[2, 2, 2, 4], 0.05, 0.9),
            uniform(&mut r, &[2, 1, 1, 4], 0.05, 0.9),
        ],
        Box::new(|t, v| Ok(rd_loss(t, v[0], v[1], &[v[2]], v[3], 256, 256.0)?.total)),
    ));
    cases.push((
        "perceptual_style_loss",
        vec![img, img_hat],
        Box::new(move |t, v| {
            let w = LossWeights::new(256.0, 1.0, 0.15)?;
            Ok(perceptual_style_loss(t, v[0], v[1], &fe, &w)?.0)
        }),
    ));

    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, inputs, f))| {
            let rep = check(&store, &inputs, cfg(seed + i as u64), |t, v| f(t, v)).unwrap();
            (name.to_string(), rep)
        })
        .collect()
}
