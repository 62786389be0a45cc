//! End-to-end acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{gradient_suite, rng, uniform, GRAD_PROBES, GRAD_TOL};
use gtvc::bitstream::{decode_gaussian, encode_gaussian, gop_lengths, unpack};
use gtvc::cli::{encode_video, EncodeOptions, Video};
use gtvc::codec::{CodecConfig, Model};
use gtvc::entropy::gaussian::likelihood;
use gtvc::entropy::motion::{align, translation_flow};
use gtvc::entropy::ConditionMode;
use gtvc::geom::scan::{forward_blocked, ScanDims, DEFAULT_BLOCK};
use gtvc::geom::{apply_transform, inverse_transform, scan_sequence, ScanOrder};
use gtvc::locality::{diff_conv, DiffConvKind, Hcb};
use gtvc::tensor::{ParamStore, Tape, Tensor};
use gtvc::train::{
    evaluate, make_synthetic_dataset, random_specs, smoothed, train_stage1, Clip, TrainConfig, DEFAULT_LAMBDA_PER,
    DEFAULT_LAMBDA_STY, LAMBDA_GRID,
};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn transform_reversibility() -> Outcome {
    let mut r = rng(1);
    let mut bad = 0;
    for _ in 0..200 {
        let shape: Vec<usize> = (0..4).map(|_| r.gen_range(1..7)).collect();
        let x = uniform(&mut r, &shape, -1e6, 1e6);
        for o in ScanOrder::ALL {
            let back = inverse_transform(&apply_transform(&x, o).unwrap(), o).unwrap();
            let exact = back.shape() == x.shape() && back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            bad += usize::from(!exact);
        }
    }
    outcome(bad == 0, format!("200 shapes x 4 orders, {bad} mismatches"))
}

fn scan_order_oracle() -> Outcome {
    let (t, h, w) = (3, 2, 2);
    let mut fst = Vec::new();
    for f in 0..t {
        for p in 0..h * w {
            fst.push((f, p));
        }
    }
    let mut fts = Vec::new();
    for p in 0..h * w {
        for f in 0..t {
            fts.push((f, p));
        }
    }
    let rev = |v: &Vec<(usize, usize)>| v.iter().rev().copied().collect::<Vec<_>>();
    let ok = scan_sequence(t, h, w, ScanOrder::Fst).unwrap() == fst
        && scan_sequence(t, h, w, ScanOrder::Fts).unwrap() == fts
        && scan_sequence(t, h, w, ScanOrder::Bst).unwrap() == rev(&fst)
        && scan_sequence(t, h, w, ScanOrder::Bts).unwrap() == rev(&fts);
    outcome(ok, "FST/FTS/BST/BTS on (3, 2, 2)")
}

#[allow(clippy::too_many_arguments)]
fn naive_scan(dims: &ScanDims, u: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let ScanDims { len, dim, nstate } = *dims;
    let mut y = vec![0.0; len * dim];
    for ch in 0..dim {
        let mut h = vec![0.0; nstate];
        for t in 0..len {
            let dt = delta[t * dim + ch];
            let x = u[t * dim + ch];
            let mut acc = d[ch] * x;
            for n in 0..nstate {
                h[n] = (dt * a[ch * nstate + n]).exp() * h[n] + dt * b[t * nstate + n] * x;
                acc += c[t * nstate + n] * h[n];
            }
            y[t * dim + ch] = acc;
        }
    }
    y
}

fn selective_scan_equivalence() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dims = ScanDims {
            len: r.gen_range(1..=256),
            dim: r.gen_range(1..=8),
            nstate: r.gen_range(1..=8),
        };
        let u = uniform(&mut r, &[dims.len * dims.dim], -1.0, 1.0);
        let delta = uniform(&mut r, &[dims.len * dims.dim], 0.001, 0.5);
        let a = uniform(&mut r, &[dims.dim * dims.nstate], -4.0, -0.05);
        let b = uniform(&mut r, &[dims.len * dims.nstate], -1.0, 1.0);
        let c = uniform(&mut r, &[dims.len * dims.nstate], -1.0, 1.0);
        let d = uniform(&mut r, &[dims.dim], -1.0, 1.0);
        let want = naive_scan(&dims, u.data(), delta.data(), a.data(), b.data(), c.data(), d.data());
        let got = forward_blocked(&dims, u.data(), delta.data(), a.data(), b.data(), c.data(), d.data(), DEFAULT_BLOCK);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() / w.abs().max(1e-12));
        }
    }
    outcome(worst < 1e-10, format!("100 instances, max rel err {worst:.2e}"))
}

fn difference_convolution_algebra() -> Outcome {
    let mut r = rng(4);
    let store = ParamStore::new();
    let mut worst_const: f64 = 0.0;
    for kind in DiffConvKind::ALL.into_iter().filter(|&k| k != DiffConvKind::Vanilla) {
        for _ in 0..10 {
            let v = r.gen_range(-5.0..5.0);
            let mut t = Tape::inference(&store);
            let x = t.constant(Tensor::full(&[2, 6, 7, 3], v));
            let k = t.constant(uniform(&mut r, &[3, 3, 3], -1.0, 1.0));
            let y = diff_conv(&mut t, x, k, kind).unwrap();
            let out = t.data(y);
            // interior pixels see no zero padding
            for row in 1..5 {
                for col in 1..6 {
                    for f in 0..2 {
                        for ch in 0..3 {
                            worst_const = worst_const.max(out[((f * 6 + row) * 7 + col) * 3 + ch].abs());
                        }
                    }
                }
            }
        }
    }
    let mut worst_merge: f64 = 0.0;
    for trial in 0..100 {
        let mut store = ParamStore::new();
        let hcb = Hcb::new(&mut store, &mut r, &format!("hcb{trial}"), 4).unwrap();
        let x = uniform(&mut r, &[2, 6, 5, 4], -1.0, 1.0);
        let mut t = Tape::inference(&store);
        let xv = t.constant(x);
        let branches = hcb.forward(&mut t, xv).unwrap();
        let merged = hcb.forward_merged(&mut t, xv).unwrap();
        for (a, b) in t.data(branches).iter().zip(t.data(merged)) {
            worst_merge = worst_merge.max((a - b).abs() / a.abs().max(1e-12));
        }
    }
    outcome(
        worst_const < 1e-12 && worst_merge < 1e-10,
        format!("constant response {worst_const:.2e}, merged vs branches rel err {worst_merge:.2e}"),
    )
}

fn gradient_verification() -> Outcome {
    let results = gradient_suite(11);
    let failed: Vec<String> = results
        .iter()
        .filter(|(_, r)| !(r.passes(GRAD_TOL) && r.probes >= GRAD_PROBES))
        .map(|(n, r)| format!("{n} ({:.2e})", r.max_rel_err))
        .collect();
    let worst = results.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max);
    let detail = if failed.is_empty() {
        format!("{} layers, worst rel err {worst:.2e}", results.len())
    } else {
        format!("failing: {}", failed.join(", "))
    };
    outcome(failed.is_empty(), detail)
}

/// Upper-bound normal CDF by integrating the density with Simpson's rule
/// from far in the left tail.
fn cdf_oracle(x: f64) -> f64 {
    let (a, n) = (-12.0, 200_000);
    let h = (x - a) / n as f64;
    let pdf = |t: f64| (-(t * t) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(a) + pdf(x);
    for i in 1..n {
        s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn held_clips(count: usize, seed: u64) -> Vec<Clip> {
    make_synthetic_dataset(&random_specs(count, 8, 64, 2, seed), seed + 1)
}

fn entropy_coding_correctness() -> Outcome {
    let mut r = rng(6);
    let n = 100_000;
    let mu: Vec<f64> = (0..n).map(|_| r.gen_range(-40.0..40.0)).collect();
    let sigma: Vec<f64> = (0..n).map(|_| r.gen_range(0.04..10.0)).collect();
    let symbols: Vec<i32> = mu
        .iter()
        .zip(&sigma)
        .map(|(&m, &s)| {
            if r.gen_bool(0.005) {
                r.gen_range(-32767..=32767)
            } else {
                (m + s * r.gen_range(-4.0..4.0)).round() as i32
            }
        })
        .collect();
    let bytes = encode_gaussian(&symbols, &mu, &sigma).unwrap();
    let round_trip = decode_gaussian(&bytes, &mu, &sigma).unwrap() == symbols;

    let model = Model::new(CodecConfig::tiny(), 6).unwrap();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut within = true;
    for clip in held_clips(2, 60) {
        for g in 0..2 {
            let x = clip.frames.select_rows(4 * g, 4).unwrap();
            let (coded, _) = model.encode_gop(&x).unwrap();
            let p = &coded.payload;
            let bits = 8.0 * (p.z.len() + p.frames.iter().flatten().map(Vec::len).sum::<usize>()) as f64;
            let est = coded.estimated_bits();
            let excess = bits - est;
            worst_excess = worst_excess.max(excess / (0.01 * est + 256.0));
            within &= (bits - est).abs() <= 0.01 * est + 256.0;
        }
    }

    let p = likelihood(0.0, 0.0, 1.0);
    let oracle = cdf_oracle(0.5) - cdf_oracle(-0.5);
    let point = (p - 0.382925).abs() < 1e-6 && (oracle - 0.382925).abs() < 1e-6;
    outcome(
        round_trip && within && point,
        format!(
            "round trip {round_trip}, worst GOP excess {:.3} of allowance, P(0|0,1) {p:.9} vs oracle {oracle:.9}",
            worst_excess
        ),
    )
}

fn decoder_sufficiency() -> Outcome {
    let model = Model::new(CodecConfig::tiny(), 7).unwrap();
    let mut r = rng(7);
    let clips = held_clips(4, 70);
    let mut mismatches = 0;
    for g in 0..20 {
        let len = r.gen_range(1..=4);
        let x = if g % 2 == 0 {
            let clip = &clips[g / 2 % clips.len()];
            clip.frames.select_rows(r.gen_range(0..=8 - len), len).unwrap()
        } else {
            uniform(&mut r, &[len, 3, 64, 64], 0.0, 1.0)
        };
        let (coded, recon) = model.encode_gop(&x).unwrap();
        let (_, y_bar) = model.entropy_decode(&coded.payload, 4, 4).unwrap();
        let decoded = model.decode_gop(&coded.payload, 64, 64).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&y_bar) != bits(&coded.y_bar) || bits(&decoded) != bits(&recon) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("20 GOPs, {mismatches} mismatches"))
}

fn motion_prior_property() -> Outcome {
    let store = ParamStore::new();
    let (frames, h, w, m) = (4, 8, 8, CodecConfig::tiny().latent_channels);
    let mut r = rng(8);
    let mut checked = 0usize;
    let mut wrong = 0usize;
    for _ in 0..10 {
        let v = (r.gen_range(-2i64..=2), r.gen_range(-2i64..=2));
        let base = uniform(&mut r, &[h, w, m], -8.0, 8.0);
        let base = Tensor::from_fn(&[h, w, m], |i| base.data()[i].round());
        // frame t is frame 0 moved by t * v, with wraparound
        let seq = Tensor::from_fn(&[frames, h, w, m], |i| {
            let (t, y, x, c) = (i / (h * w * m), (i / (w * m)) % h, (i / m) % w, i % m);
            let sy = (y as i64 - t as i64 * v.1).rem_euclid(h as i64) as usize;
            let sx = (x as i64 - t as i64 * v.0).rem_euclid(w as i64) as usize;
            base.data()[(sy * w + sx) * m + c]
        });
        for t in 1..frames {
            let mut tape = Tape::inference(&store);
            let prev = tape.constant(seq.select_rows(t - 1, 1).unwrap());
            // the previous motion equals the current one at constant velocity
            let flow = tape.constant(translation_flow(1, h, w, (v.0 as f64, v.1 as f64)));
            let warped = align(&mut tape, prev, flow).unwrap();
            let cur = seq.select_rows(t, 1).unwrap();
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let (sy, sx) = (y - v.1, x - v.0);
                    if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                        continue;
                    }
                    for c in 0..m {
                        let i = ((y as usize) * w + x as usize) * m + c;
                        checked += 1;
                        wrong += usize::from(tape.data(warped)[i] != cur.data()[i]);
                    }
                }
            }
        }
    }
    outcome(wrong == 0, format!("{checked} interior elements, {wrong} differ"))
}

fn mean_eval(model: &Model, clips: &[Clip]) -> (f64, f64) {
    let e: Vec<_> = clips.iter().map(|c| evaluate(model, c, 8).unwrap()).collect();
    let n = e.len() as f64;
    (e.iter().map(|e| e.bpp).sum::<f64>() / n, e.iter().map(|e| e.psnr).sum::<f64>() / n)
}

fn training_signal() -> Outcome {
    let data = make_synthetic_dataset(&random_specs(24, 8, 64, 2, 3), 4);
    let held = held_clips(6, 99);
    let mut model = Model::new(CodecConfig::tiny(), 1).unwrap();
    let (bpp0, psnr0) = mean_eval(&model, &held);
    let mut rds = Vec::new();
    let started = Instant::now();
    let cfg = TrainConfig::stage1(5000, 5);
    let trained = train_stage1(&mut model, &data, LAMBDA_GRID[1], &cfg, |rec| {
        rds.push(rec.rd);
        if rec.step % 500 == 0 {
            eprintln!("  step {:>4} rd {:.4} ({:.0} s)", rec.step, rec.rd, started.elapsed().as_secs_f64());
        }
    });
    if let Err(e) = trained {
        return outcome(false, format!("training failed: {e}"));
    }
    let s = smoothed(&rds, 50);
    // the first full window against the last
    let (first, last) = (s[49], s[s.len() - 1]);
    let (bpp1, psnr1) = mean_eval(&model, &held);
    model.entropy.mode = ConditionMode::Zeroed;
    let (bpp_zero, _) = mean_eval(&model, &held);
    let a = last < first;
    let b = bpp1 < bpp0 && psnr1 >= psnr0;
    let c = bpp1 < bpp_zero;
    outcome(
        a && b && c,
        format!(
            "(a) {a} smoothed rd {first:.3} -> {last:.3}; (b) {b} bpp {bpp0:.4} -> {bpp1:.4}, psnr {psnr0:.2} -> {psnr1:.2}; \
             (c) {c} bpp {bpp1:.4} vs zeroed {bpp_zero:.4}"
        ),
    )
}

fn protocol_conformance() -> Outcome {
    let frames = Tensor::from_fn(&[96, 3, 16, 16], |i| ((i * 7919) % 256) as f64 / 255.0);
    let video = Video::new(frames).unwrap();
    let opts = EncodeOptions {
        gop: 8,
        threads: 1,
        ..EncodeOptions::default()
    };
    let (bytes, out) = encode_video(&video, &opts).unwrap();
    let (header, gops) = unpack(&bytes).unwrap();
    let segments_ok = out.segments == 12 && gops.len() == 12 && gop_lengths(96, 8) == vec![8; 12] && header.gop_size == 8;
    let grid_ok = LAMBDA_GRID == [128.0, 256.0, 512.0];
    let defaults_ok = DEFAULT_LAMBDA_PER == 1.0 && DEFAULT_LAMBDA_STY == 0.15;
    outcome(
        segments_ok && grid_ok && defaults_ok,
        format!("{} GOP segments, lambda grid {LAMBDA_GRID:?}, stage-2 weights {DEFAULT_LAMBDA_PER}/{DEFAULT_LAMBDA_STY}", gops.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, f64, fn() -> Outcome); 10] = [
        ("transform reversibility", 10.0, transform_reversibility),
        ("scan-order oracle", 1.0, scan_order_oracle),
        ("selective-scan equivalence", 30.0, selective_scan_equivalence),
        ("difference-convolution algebra", 10.0, difference_convolution_algebra),
        ("gradient verification", 300.0, gradient_verification),
        ("entropy-coding correctness", 60.0, entropy_coding_correctness),
        ("decoder sufficiency", 120.0, decoder_sufficiency),
        ("motion-prior property", 30.0, motion_prior_property),
        ("end-to-end training signal", 4.0 * 3600.0, training_signal),
        ("protocol conformance", 60.0, protocol_conformance),
    ];
    let only: Option<usize> = std::env::var("GTVC_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let started = Instant::now();
        let out = run();
        let secs = started.elapsed().as_secs_f64();
        let passed = out.passed && secs <= *budget;
        failures += usize::from(!passed);
        let tag = if passed { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {tag} {name} [{secs:.1} s / {budget:.0} s] {}", out.detail);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
