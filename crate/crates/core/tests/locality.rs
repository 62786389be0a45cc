mod common;

use common::{rng, uniform};
use gtvc::locality::{diff_conv, DiffConvKind, Hcb, Lrffn};
use gtvc::tensor::{ParamStore, Tape, Tensor};
use proptest::prelude::*;

/// Response at one pixel from its zero-padded 3x3 neighbourhood `p`.
fn direct_difference(kind: DiffConvKind, w: &[f64; 9], p: &[f64; 9]) -> f64 {
    let ring = [0, 1, 2, 5, 8, 7, 6, 3];
    match kind {
        DiffConvKind::Vanilla => (0..9).map(|i| w[i] * p[i]).sum(),
        DiffConvKind::Central => (0..9).map(|i| w[i] * (p[i] - p[4])).sum(),
        DiffConvKind::Horizontal => [0, 3, 6]
            .iter()
            .map(|&r| w[r] * (p[r] - p[r + 1]) + w[r + 2] * (p[r + 2] - p[r + 1]))
            .sum(),
        DiffConvKind::Vertical => (0..3).map(|c| w[c] * (p[c] - p[c + 3]) + w[c + 6] * (p[c + 6] - p[c + 3])).sum(),
        DiffConvKind::Angular => (0..8).map(|j| w[ring[j]] * (p[ring[j]] - p[ring[(j + 1) % 8]])).sum(),
    }
}

fn run_diff(x: &Tensor, k: &Tensor, kind: DiffConvKind) -> Tensor {
    let store = ParamStore::new();
    let mut t = Tape::inference(&store);
    let (xv, kv) = (t.constant(x.clone()), t.constant(k.clone()));
    let y = diff_conv(&mut t, xv, kv, kind).unwrap();
    t.value(y).clone()
}

#[test]
fn rewritten_kernels_match_direct_differences() {
    let mut r = rng(1);
    let (h, w, c) = (5, 6, 2);
    let x = uniform(&mut r, &[1, h, w, c], -1.0, 1.0);
    let k = uniform(&mut r, &[3, 3, c], -1.0, 1.0);
    for kind in DiffConvKind::ALL {
        let y = run_diff(&x, &k, kind);
        for row in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let mut p = [0.0; 9];
                    for dr in 0..3 {
                        for dc in 0..3 {
                            let (rr, cc) = (row as isize + dr as isize - 1, col as isize + dc as isize - 1);
                            if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize {
                                p[dr * 3 + dc] = x.data()[((rr as usize) * w + cc as usize) * c + ch];
                            }
                        }
                    }
                    let kk: [f64; 9] = std::array::from_fn(|i| k.data()[i * c + ch]);
                    let want = direct_difference(kind, &kk, &p);
                    let got = y.data()[(row * w + col) * c + ch];
                    assert!((got - want).abs() < 1e-12, "{kind:?}");
                }
            }
        }
    }
}

#[test]
fn difference_kernels_sum_to_zero() {
    let mut r = rng(2);
    for kind in DiffConvKind::ALL.into_iter().filter(|&k| k != DiffConvKind::Vanilla) {
        let k: [f64; 9] = std::array::from_fn(|_| rand::Rng::gen_range(&mut r, -1.0..1.0));
        assert!(kind.rewrite(&k).iter().sum::<f64>().abs() < 1e-12, "{kind:?}");
    }
}

#[test]
fn unread_taps_get_no_gradient() {
    let mut r = rng(3);
    let store = ParamStore::new();
    let x = uniform(&mut r, &[1, 4, 4, 1], -1.0, 1.0);
    for (kind, unused) in [
        (DiffConvKind::Horizontal, vec![1, 4, 7]),
        (DiffConvKind::Vertical, vec![3, 4, 5]),
        (DiffConvKind::Angular, vec![4]),
        (DiffConvKind::Central, vec![4]),
    ] {
        let mut t = Tape::new(&store);
        let xv = t.constant(x.clone());
        let kv = t.input(uniform(&mut r, &[3, 3, 1], -1.0, 1.0));
        let y = diff_conv(&mut t, xv, kv, kind).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        let gk = g.wrt(kv).unwrap();
        for i in unused {
            assert_eq!(gk[i], 0.0, "{kind:?} tap {i}");
        }
    }
}

#[test]
fn hcb_merged_equals_branches() {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let mut store = ParamStore::new();
        let hcb = Hcb::new(&mut store, &mut r, &format!("h{trial}"), 3).unwrap();
        let x = uniform(&mut r, &[2, 5, 4, 3], -1.0, 1.0);
        let mut t = Tape::inference(&store);
        let xv = t.constant(x);
        let a = hcb.forward(&mut t, xv).unwrap();
        let b = hcb.forward_merged(&mut t, xv).unwrap();
        for (p, q) in t.data(a).iter().zip(t.data(b)) {
            worst = worst.max((p - q).abs() / q.abs().max(1e-12));
        }
    }
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn lrffn_keeps_shape_and_rejects_odd_width() {
    let mut r = rng(5);
    let mut store = ParamStore::new();
    let f = Lrffn::new(&mut store, &mut r, "f", 4, 8).unwrap();
    let mut t = Tape::inference(&store);
    let x = t.constant(uniform(&mut r, &[2, 3, 3, 4], -1.0, 1.0));
    let y = f.forward(&mut t, x).unwrap();
    assert_eq!(t.shape(y), &[2, 3, 3, 4]);
    assert!(Lrffn::new(&mut store, &mut r, "g", 4, 7).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constant_inputs_vanish_in_the_interior(v in -10.0f64..10.0, seed in 0u64..10_000) {
        let mut r = rng(seed);
        let x = Tensor::full(&[1, 5, 5, 2], v);
        let k = uniform(&mut r, &[3, 3, 2], -1.0, 1.0);
        for kind in DiffConvKind::ALL.into_iter().filter(|&k| k != DiffConvKind::Vanilla) {
            let y = run_diff(&x, &k, kind);
            for row in 1..4 {
                for col in 1..4 {
                    for ch in 0..2 {
                        prop_assert!(y.data()[(row * 5 + col) * 2 + ch].abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn rewrites_are_linear(seed in 0u64..10_000, s in -3.0f64..3.0) {
        let mut r = rng(seed);
        let a: [f64; 9] = std::array::from_fn(|_| rand::Rng::gen_range(&mut r, -1.0..1.0));
        let b: [f64; 9] = std::array::from_fn(|_| rand::Rng::gen_range(&mut r, -1.0..1.0));
        let ab: [f64; 9] = std::array::from_fn(|i| a[i] + s * b[i]);
        for kind in DiffConvKind::ALL {
            let (ra, rb, rab) = (kind.rewrite(&a), kind.rewrite(&b), kind.rewrite(&ab));
            for i in 0..9 {
                prop_assert!((rab[i] - ra[i] - s * rb[i]).abs() < 1e-12);
            }
        }
    }
}
