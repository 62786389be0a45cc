mod common;

use common::{rng, small_config, uniform};
use gtvc::codec::{CodecConfig, Model};
use gtvc::entropy::gaussian::{bin_probability, likelihood, P_MIN};
use gtvc::entropy::motion::{align, translation_flow};
use gtvc::entropy::{ConditionBuffer, ConditionMode, EntropyModel, Quantization};
use gtvc::tensor::{ParamStore, Tape, Tensor};
use proptest::prelude::*;

/// Composite Simpson integral of the standard normal density over `[a, b]`.
fn simpson_mass(a: f64, b: f64, mu: f64, sigma: f64) -> f64 {
    let n = 20_000;
    let h = (b - a) / n as f64;
    let pdf = |x: f64| (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut s = pdf(a) + pdf(b);
    for i in 1..n {
        s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn centre_bin_of_unit_gaussian() {
    let p = likelihood(0.0, 0.0, 1.0);
    let oracle = simpson_mass(-0.5, 0.5, 0.0, 1.0);
    assert!((oracle - 0.382925).abs() < 1e-6);
    assert!((p - oracle).abs() < 1e-12);
}

#[test]
fn bins_match_quadrature() {
    for (y, mu, sigma) in [(3.0, 0.2, 0.7), (-2.0, 1.5, 2.5), (0.0, -0.4, 0.1), (7.0, 0.0, 3.0)] {
        let q = simpson_mass(y - 0.5, y + 0.5, mu, sigma);
        assert!((bin_probability(y, mu, sigma) - q).abs() < 1e-12, "{y} {mu} {sigma}");
    }
    assert_eq!(likelihood(60.0, 0.0, 1.0), P_MIN);
}

fn entropy_model(seed: u64) -> (ParamStore, EntropyModel) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let m = EntropyModel::new(&mut store, &mut r, &small_config()).unwrap();
    common::jitter(&mut store, &mut r, 0.05);
    (store, m)
}

fn frame_likelihoods(store: &ParamStore, m: &EntropyModel, y: &Tensor) -> Vec<Vec<f64>> {
    let mut t = Tape::inference(store);
    let yv = t.constant(y.clone());
    let pass = m.forward_gop(&mut t, yv, Quantization::Round).unwrap();
    pass.likelihood_y.iter().map(|&v| t.data(v).to_vec()).collect()
}

#[test]
fn slices_depend_only_on_earlier_slices() {
    let (store, m) = entropy_model(1);
    let mut r = rng(2);
    let y = uniform(&mut r, &[1, 4, 4, 10], -3.0, 3.0);
    let base = frame_likelihoods(&store, &m, &y);
    // perturb only the last slice (channels 8..10)
    let mut y2 = y.clone();
    for (i, v) in y2.data_mut().iter_mut().enumerate() {
        if i % 10 >= 8 {
            *v += 2.0;
        }
    }
    let z_same = {
        let a = m.hyper_encode(&store, &y).unwrap();
        let b = m.hyper_encode(&store, &y2).unwrap();
        a == b
    };
    let moved = frame_likelihoods(&store, &m, &y2);
    if z_same {
        for j in 0..4 {
            assert_eq!(base[j], moved[j], "slice {j}");
        }
    }
    assert_ne!(base[4], moved[4]);
}

#[test]
fn slice_parameters_ignore_later_slices_given_the_hyperprior() {
    let (store, m) = entropy_model(3);
    let mut r = rng(4);
    let f_mu = uniform(&mut r, &[1, 4, 4, 10], -1.0, 1.0);
    let f_sigma = uniform(&mut r, &[1, 4, 4, 10], 0.5, 2.0);
    let truth = uniform(&mut r, &[1, 4, 4, 10], -3.0, 3.0);
    let run = |later: f64| {
        let mut buffer = ConditionBuffer::new();
        let mut params = Vec::new();
        m.slice_pass(&store, &f_mu, &f_sigma, &mut buffer, |j, p| {
            params.push((p.mu.clone(), p.sigma.clone()));
            let s = truth.slice_last(2 * j, 2)?;
            let shift = if j >= 2 { later } else { 0.0 };
            Ok(Tensor::from_fn(s.shape(), |i| s.data()[i].round() + shift))
        })
        .unwrap();
        params
    };
    let (a, b) = (run(0.0), run(5.0));
    for j in 0..3 {
        assert_eq!(a[j], b[j], "slice {j} saw a later slice");
    }
    assert_ne!(a[3], b[3]);
}

#[test]
fn frames_depend_only_on_the_past() {
    let (store, m) = entropy_model(5);
    let mut r = rng(6);
    let y = uniform(&mut r, &[3, 4, 4, 10], -3.0, 3.0);
    let mut y2 = y.clone();
    let n = y2.len();
    for v in &mut y2.data_mut()[2 * n / 3..] {
        *v += 1.0;
    }
    let (a, b) = (frame_likelihoods(&store, &m, &y), frame_likelihoods(&store, &m, &y2));
    assert_eq!(a[..10], b[..10]);
    assert_ne!(a[10..], b[10..]);
}

#[test]
fn zeroed_condition_changes_only_later_frames_rates() {
    let (store, mut m) = entropy_model(7);
    let mut r = rng(8);
    let y = uniform(&mut r, &[2, 4, 4, 10], -3.0, 3.0);
    let on = frame_likelihoods(&store, &m, &y);
    m.mode = ConditionMode::Zeroed;
    let off = frame_likelihoods(&store, &m, &y);
    assert_ne!(on[5..], off[5..]);
}

#[test]
fn noise_quantization_is_seeded() {
    let (store, m) = entropy_model(9);
    let y = uniform(&mut rng(10), &[1, 4, 4, 10], -3.0, 3.0);
    let run = |seed: u64| {
        let mut t = Tape::inference(&store);
        let yv = t.constant(y.clone());
        let mut r = rng(seed);
        let p = m.forward_gop(&mut t, yv, Quantization::Noise(&mut r)).unwrap();
        t.data(p.likelihood_z).to_vec()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn translation_is_undone_by_the_true_flow() {
    let store = ParamStore::new();
    let (h, w, c) = (8, 8, 3);
    let base = uniform(&mut rng(11), &[1, h, w, c], -2.0, 2.0);
    for v in [(1i64, 0i64), (0, 1), (-2, 1), (1, -1)] {
        // frame t is frame t-1 moved by v
        let moved = Tensor::from_fn(&[1, h, w, c], |i| {
            let (y, x, ch) = (i / (w * c), (i / c) % w, i % c);
            let sy = (y as i64 - v.1).rem_euclid(h as i64) as usize;
            let sx = (x as i64 - v.0).rem_euclid(w as i64) as usize;
            base.data()[(sy * w + sx) * c + ch]
        });
        let mut t = Tape::inference(&store);
        let prev = t.constant(base.clone());
        let flow = t.constant(translation_flow(1, h, w, (v.0 as f64, v.1 as f64)));
        let out = align(&mut t, prev, flow).unwrap();
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = (y as i64 - v.1, x as i64 - v.0);
                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                    continue;
                }
                for ch in 0..c {
                    let i = (y * w + x) * c + ch;
                    assert_eq!(t.data(out)[i], moved.data()[i], "v {v:?} at ({y},{x})");
                }
            }
        }
    }
}

#[test]
fn decoder_reproduces_encoder_state() {
    let model = Model::new(CodecConfig::tiny(), 12).unwrap();
    let mut r = rng(13);
    for frames in [1, 2, 4] {
        let x = uniform(&mut r, &[frames, 3, 64, 64], 0.0, 1.0);
        let (coded, recon) = model.encode_gop(&x).unwrap();
        let (y_hat, y_bar) = model.entropy_decode(&coded.payload, 4, 4).unwrap();
        assert_eq!(y_hat, coded.y_hat);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&y_bar), bits(&coded.y_bar));
        assert_eq!(bits(&model.decode_gop(&coded.payload, 64, 64).unwrap()), bits(&recon));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn likelihoods_are_probabilities(y in -50i32..50, mu in -20.0f64..20.0, sigma in 0.01f64..50.0) {
        let p = likelihood(f64::from(y), mu, sigma);
        prop_assert!((P_MIN..=1.0).contains(&p));
    }

    #[test]
    fn bins_sum_to_one(mu in -5.0f64..5.0, sigma in 0.05f64..5.0) {
        let s: f64 = (-200..=200).map(|y| bin_probability(f64::from(y), mu, sigma)).sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
    }
}
