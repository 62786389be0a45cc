//! Range-code Gaussian-distributed integers and compare the stream size
//! with the ideal code length.

use gtvc::bitstream::{decode_gaussian, encode_gaussian, model_cost_bits};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

fn main() -> gtvc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 50_000;
    let means = Uniform::new(-10.0, 10.0);
    let scales = Uniform::new(0.1, 6.0);
    let mu: Vec<f64> = (0..n).map(|_| means.sample(&mut rng)).collect();
    let sigma: Vec<f64> = (0..n).map(|_| scales.sample(&mut rng)).collect();
    let symbols: Vec<i32> = mu
        .iter()
        .zip(&sigma)
        .map(|(&m, &s)| Normal::new(m, s).expect("positive scale").sample(&mut rng).round() as i32)
        .collect();

    let bytes = encode_gaussian(&symbols, &mu, &sigma)?;
    let decoded = decode_gaussian(&bytes, &mu, &sigma)?;
    let ideal: f64 = symbols.iter().zip(&mu).zip(&sigma).map(|((&v, &m), &s)| model_cost_bits(v, m, s)).sum();
    println!("{n} symbols -> {} bytes ({:.4} bits/symbol)", bytes.len(), 8.0 * bytes.len() as f64 / n as f64);
    println!("ideal {:.1} bits, overhead {:.3}%", ideal, 100.0 * (8.0 * bytes.len() as f64 / ideal - 1.0));
    println!("lossless: {}", decoded == symbols);
    Ok(())
}
