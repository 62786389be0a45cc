use gtvc::bitstream::{
    build_cdf, decode_gaussian, encode_gaussian, model_cost_bits, RangeDecoder, RangeEncoder, TOTAL,
};
use gtvc::entropy::gaussian::bin_probability;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// KL(true || coded) in bits per symbol, summed over a wide integer range.
fn kl_bits(mu: f64, sigma: f64) -> f64 {
    let t = build_cdf(mu, sigma);
    let span = (40.0 * sigma).ceil() as i32 + 2;
    let c = mu.round() as i32;
    let mut kl = 0.0;
    for v in c - span..=c + span {
        let p = bin_probability(v as f64, mu, sigma);
        if p > 0.0 {
            kl += p * (p / t.probability(v)).log2();
        }
    }
    kl
}

#[test]
fn quantized_table_is_close_to_the_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..=60 {
        let sigma = 0.1 * 100f64.powf(i as f64 / 60.0);
        let mu = rng.gen_range(-20.0..20.0);
        worst = worst.max(kl_bits(mu, sigma));
    }
    assert!(worst < 1e-3, "worst KL {worst}");
}

#[test]
fn frequencies_sum_to_total() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let t = build_cdf(rng.gen_range(-300.0..300.0), rng.gen_range(0.0..50.0));
        assert_eq!(*t.cum.last().unwrap(), TOTAL);
        assert!((0..t.cum.len() - 1).all(|i| t.freq(i) >= 1));
    }
}

#[test]
fn hundred_thousand_symbols_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
    let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.04..8.0)).collect();
    let symbols: Vec<i32> = mu
        .iter()
        .zip(&sigma)
        .map(|(&m, &s)| {
            if rng.gen_bool(0.01) {
                rng.gen_range(-32767..=32767)
            } else {
                (m + s * rng.gen_range(-3.0..3.0)).round() as i32
            }
        })
        .collect();
    let bytes = encode_gaussian(&symbols, &mu, &sigma).unwrap();
    assert_eq!(decode_gaussian(&bytes, &mu, &sigma).unwrap(), symbols);
}

#[test]
fn coded_size_tracks_model_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 20_000;
    let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..4.0)).collect();
    let symbols: Vec<i32> = mu
        .iter()
        .zip(&sigma)
        .map(|(&m, &s)| (m + s * rng.gen_range(-2.0..2.0)).round() as i32)
        .collect();
    let cost: f64 = symbols
        .iter()
        .zip(&mu)
        .zip(&sigma)
        .map(|((&v, &m), &s)| model_cost_bits(v, m, s))
        .sum();
    let bytes = encode_gaussian(&symbols, &mu, &sigma).unwrap();
    let bits = bytes.len() as f64 * 8.0;
    assert!(bits <= cost + 32.0 * 8.0, "{bits} vs {cost}");
    assert!(bits >= cost - 8.0, "{bits} vs {cost}");
}

#[test]
fn empty_sequence() {
    let bytes = encode_gaussian(&[], &[], &[]).unwrap();
    assert!(bytes.len() <= 8);
    assert!(decode_gaussian(&bytes, &[], &[]).unwrap().is_empty());
}

#[test]
fn corrupted_stream_never_panics() {
    let mu = vec![0.0; 200];
    let sigma = vec![1.0; 200];
    let symbols: Vec<i32> = (0..200).map(|i| (i % 5) - 2).collect();
    let bytes = encode_gaussian(&symbols, &mu, &sigma).unwrap();
    for i in 0..bytes.len() {
        let mut b = bytes.clone();
        b[i] ^= 0x5a;
        // either an error or some symbols; the container CRC catches the rest
        let _ = decode_gaussian(&b, &mu, &sigma);
    }
    let truncated = decode_gaussian(&bytes[..3], &mu, &sigma);
    assert!(truncated.map_or(true, |v| v != symbols));
}

#[test]
fn raw_bits_and_symbols_interleave() {
    let mut e = RangeEncoder::new();
    e.encode(100, 5);
    e.encode_bits(3, 2);
    e.encode(0, TOTAL);
    let bytes = e.finish();
    let mut d = RangeDecoder::new(&bytes);
    let v = d.peek().unwrap();
    assert!((100..105).contains(&v));
    d.consume(100, 5).unwrap();
    assert_eq!(d.decode_bits(2).unwrap(), 3);
}

proptest! {
    #[test]
    fn round_trip_any_parameters(
        items in proptest::collection::vec((-40i32..40, -50.0f64..50.0, 0.0f64..30.0), 0..300)
    ) {
        let symbols: Vec<i32> = items.iter().map(|x| x.0).collect();
        let mu: Vec<f64> = items.iter().map(|x| x.1).collect();
        let sigma: Vec<f64> = items.iter().map(|x| x.2).collect();
        let bytes = encode_gaussian(&symbols, &mu, &sigma).unwrap();
        prop_assert_eq!(decode_gaussian(&bytes, &mu, &sigma).unwrap(), symbols);
    }

    #[test]
    fn cdf_is_strictly_increasing(mu in -400.0f64..400.0, sigma in 0.0f64..100.0) {
        let t = build_cdf(mu, sigma);
        prop_assert!(t.cum.windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(*t.cum.last().unwrap(), TOTAL);
    }
}

