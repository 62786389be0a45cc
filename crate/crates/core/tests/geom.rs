mod common;

use common::{rng, uniform};
use gtvc::geom::scan::{forward, forward_blocked, ScanDims};
use gtvc::geom::{apply_transform, inverse_transform, scan_sequence, Cmm, Gtmb, ScanOrder};
use gtvc::tensor::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

/// Direct recurrence per channel and state.
pub fn naive_scan(dims: &ScanDims, u: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
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

fn brute_force(t: usize, h: usize, w: usize, temporal_first: bool) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    if temporal_first {
        for p in 0..h * w {
            for f in 0..t {
                v.push((f, p));
            }
        }
    } else {
        for f in 0..t {
            for p in 0..h * w {
                v.push((f, p));
            }
        }
    }
    v
}

#[test]
fn scan_orders_match_enumeration() {
    for (t, h, w) in [(3, 2, 2), (2, 3, 1), (4, 1, 5)] {
        let fst = brute_force(t, h, w, false);
        let fts = brute_force(t, h, w, true);
        assert_eq!(scan_sequence(t, h, w, ScanOrder::Fst).unwrap(), fst);
        assert_eq!(scan_sequence(t, h, w, ScanOrder::Fts).unwrap(), fts);
        assert_eq!(scan_sequence(t, h, w, ScanOrder::Bst).unwrap(), fst.into_iter().rev().collect::<Vec<_>>());
        assert_eq!(scan_sequence(t, h, w, ScanOrder::Bts).unwrap(), fts.into_iter().rev().collect::<Vec<_>>());
    }
}

#[test]
fn kernels_agree_with_the_direct_recurrence() {
    let mut r = rng(3);
    for _ in 0..30 {
        let dims = ScanDims {
            len: r.gen_range(1..200),
            dim: r.gen_range(1..5),
            nstate: r.gen_range(1..6),
        };
        let u = uniform(&mut r, &[dims.len * dims.dim], -1.0, 1.0);
        let delta = uniform(&mut r, &[dims.len * dims.dim], 0.001, 0.3);
        let a = uniform(&mut r, &[dims.dim * dims.nstate], -3.0, -0.1);
        let b = uniform(&mut r, &[dims.len * dims.nstate], -1.0, 1.0);
        let c = uniform(&mut r, &[dims.len * dims.nstate], -1.0, 1.0);
        let d = uniform(&mut r, &[dims.dim], -1.0, 1.0);
        let args = (u.data(), delta.data(), a.data(), b.data(), c.data(), d.data());
        let want = naive_scan(&dims, args.0, args.1, args.2, args.3, args.4, args.5);
        let seq = forward(&dims, args.0, args.1, args.2, args.3, args.4, args.5, true).y;
        for block in [1, 7, 64, 1000] {
            let blk = forward_blocked(&dims, args.0, args.1, args.2, args.3, args.4, args.5, block);
            for ((x, y), z) in blk.iter().zip(&seq).zip(&want) {
                assert!((x - z).abs() <= 1e-12 * (1.0 + z.abs()));
                assert!((y - z).abs() <= 1e-12 * (1.0 + z.abs()));
            }
        }
    }
}

#[test]
fn gtmb_is_conjugated_core() {
    let mut r = rng(4);
    let mut store = ParamStore::new();
    let x = uniform(&mut r, &[2, 3, 2, 4], -1.0, 1.0);
    for order in ScanOrder::ALL {
        let g = Gtmb::new(&mut store, &mut r, &format!("g{order}"), 4, 3, order).unwrap();
        let mut t = Tape::inference(&store);
        let xv = t.constant(x.clone());
        let full = g.forward(&mut t, xv).unwrap();
        let tx = t.constant(apply_transform(&x, order).unwrap());
        let core = g.forward_core(&mut t, tx).unwrap();
        let back = inverse_transform(t.value(core), order).unwrap();
        assert_eq!(t.value(full), &back, "{order}");
    }
}

#[test]
fn backward_scan_sees_the_future() {
    // a change in the last frame reaches frame 0 only through the backward orders
    let mut r = rng(5);
    let mut store = ParamStore::new();
    let fwd = Gtmb::new(&mut store, &mut r, "f", 4, 3, ScanOrder::Fst).unwrap();
    let bwd = Gtmb::new(&mut store, &mut r, "b", 4, 3, ScanOrder::Bst).unwrap();
    let x = uniform(&mut r, &[3, 4, 4, 4], -1.0, 1.0);
    let mut x2 = x.clone();
    let last = x2.len() - 1;
    x2.data_mut()[last] += 1.0;
    let first_frame = |g: &Gtmb, x: &Tensor| {
        let mut t = Tape::inference(&store);
        let v = t.constant(x.clone());
        let y = g.forward(&mut t, v).unwrap();
        t.value(y).select_rows(0, 1).unwrap()
    };
    assert_eq!(first_frame(&fwd, &x), first_frame(&fwd, &x2));
    assert_ne!(first_frame(&bwd, &x), first_frame(&bwd, &x2));
}

#[test]
fn cmm_cascades_all_four_orders() {
    let mut r = rng(6);
    let mut store = ParamStore::new();
    let cmm = Cmm::new(&mut store, &mut r, "cmm", 4, 2).unwrap();
    let orders: Vec<ScanOrder> = cmm.blocks.iter().map(|b| b.order).collect();
    assert_eq!(orders, ScanOrder::ALL);
    assert_eq!(store.count_prefix("cmm.fst"), store.count_prefix("cmm.bts"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transforms_are_bit_exact_bijections(dims in proptest::collection::vec(1usize..6, 4), seed in 0u64..u64::MAX) {
        let mut r = rng(seed);
        let x = uniform(&mut r, &dims, -1e3, 1e3);
        for o in ScanOrder::ALL {
            let y = apply_transform(&x, o).unwrap();
            prop_assert_eq!(inverse_transform(&y, o).unwrap(), x.clone());
            let mut a = y.data().to_vec();
            let mut b = x.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn scan_visits_every_position_once(t in 1usize..5, h in 1usize..5, w in 1usize..5) {
        for o in ScanOrder::ALL {
            let mut s = scan_sequence(t, h, w, o).unwrap();
            s.sort();
            let all: Vec<(usize, usize)> = (0..t).flat_map(|f| (0..h * w).map(move |p| (f, p))).collect();
            prop_assert_eq!(s, all);
        }
    }
}
