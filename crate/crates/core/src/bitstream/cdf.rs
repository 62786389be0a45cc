//! Quantized Gaussian CDF tables.
//!
//! Each coded element gets its own table over a window of integers around
//! its mean, plus one escape symbol. Symbols outside the window (or outside
//! `[-ALPHABET_BOUND, ALPHABET_BOUND]`) are sent as the escape symbol
//! followed by a 16-bit bypass value. The window holds every integer whose
//! bin mass is at least `2^-18`, so the table tracks the Gaussian closely
//! for any scale.

use super::range::{RangeDecoder, RangeEncoder, TOTAL};
use crate::entropy::gaussian::{bin_probability, interval_probability, SIGMA_MIN};
use crate::error::{Error, Result};

/// Largest magnitude coded through a table.
pub const ALPHABET_BOUND: i32 = 255;
/// Largest magnitude representable at all (bypass range).
pub const VALUE_BOUND: i32 = 32767;
const BYPASS_BITS: u32 = 16;
const WINDOW_MASS: f64 = 1.0 / 262_144.0;
const MAX_HALF_WIDTH: i32 = 2 * ALPHABET_BOUND;

/// Cumulative frequencies over `lo..lo + n` and a trailing escape symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    pub lo: i32,
    /// `cum[0] = 0`, `cum[n + 1] = 2^16`; entry `n` starts the escape symbol.
    pub cum: Vec<u32>,
}

impl CdfTable {
    /// Number of in-window symbols.
    pub fn symbols(&self) -> usize {
        self.cum.len() - 2
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.symbols() as i32 - 1
    }

    pub fn freq(&self, i: usize) -> u32 {
        self.cum[i + 1] - self.cum[i]
    }

    pub fn escape_index(&self) -> usize {
        self.symbols()
    }

    /// Modelled probability of `v`, bypass included.
    pub fn probability(&self, v: i32) -> f64 {
        if (self.lo..=self.hi()).contains(&v) {
            f64::from(self.freq((v - self.lo) as usize)) / f64::from(TOTAL)
        } else {
            f64::from(self.freq(self.escape_index())) / f64::from(TOTAL) / f64::from(1u32 << BYPASS_BITS)
        }
    }
}

/// Extend from `center` in direction `step` while bins keep enough mass.
fn window_edge(center: i32, step: i32, mu: f64, sigma: f64) -> i32 {
    let mut v = center;
    while (v - center).abs() < MAX_HALF_WIDTH
        && (v + step).abs() <= ALPHABET_BOUND
        && bin_probability(f64::from(v + step), mu, sigma) >= WINDOW_MASS
    {
        v += step;
    }
    v
}

/// Table for `N(mu, sigma^2)` discretized to unit bins.
pub fn build_cdf(mu: f64, sigma: f64) -> CdfTable {
    let sigma = sigma.max(SIGMA_MIN);
    let bound = f64::from(ALPHABET_BOUND);
    let center = mu.clamp(-bound, bound).round() as i32;
    let lo = window_edge(center, -1, mu, sigma);
    let hi = window_edge(center, 1, mu, sigma);
    let n = (hi - lo + 1) as usize;
    let mut probs: Vec<f64> = (lo..=hi).map(|v| bin_probability(f64::from(v), mu, sigma)).collect();
    let inside = interval_probability(f64::from(lo) - 0.5, f64::from(hi) + 0.5, mu, sigma);
    probs.push((1.0 - inside).max(0.0));

    let total = i64::from(TOTAL);
    let mut freqs: Vec<i64> = probs
        .iter()
        .map(|&p| ((p * total as f64).round() as i64).max(1))
        .collect();
    // fix the total on the most probable symbols, never below frequency 1
    let mut diff = total - freqs.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..freqs.len()).collect();
    order.sort_by(|&a, &b| freqs[b].cmp(&freqs[a]).then(a.cmp(&b)));
    while diff != 0 {
        for &i in &order {
            if diff == 0 {
                break;
            }
            if diff > 0 {
                let step = diff.min(freqs[i].max(1));
                freqs[i] += step;
                diff -= step;
            } else {
                let step = (-diff).min(freqs[i] - 1);
                freqs[i] -= step;
                diff += step;
            }
        }
    }
    let mut cum = Vec::with_capacity(n + 2);
    cum.push(0u32);
    let mut acc = 0u32;
    for f in freqs {
        acc += f as u32;
        cum.push(acc);
    }
    CdfTable { lo, cum }
}

/// Code `v` under the Gaussian table of `(mu, sigma)`.
pub fn encode_value(enc: &mut RangeEncoder, v: i32, mu: f64, sigma: f64) -> Result<()> {
    if v.abs() > VALUE_BOUND {
        return Err(Error::InvalidArgument(format!("value {v} exceeds +-{VALUE_BOUND}")));
    }
    let t = build_cdf(mu, sigma);
    if (t.lo..=t.hi()).contains(&v) {
        let i = (v - t.lo) as usize;
        enc.encode(t.cum[i], t.freq(i));
    } else {
        let e = t.escape_index();
        enc.encode(t.cum[e], t.freq(e));
        enc.encode_bits((v + VALUE_BOUND + 1) as u32, BYPASS_BITS);
    }
    Ok(())
}

pub fn decode_value(dec: &mut RangeDecoder, mu: f64, sigma: f64) -> Result<i32> {
    let t = build_cdf(mu, sigma);
    let target = dec.peek()?;
    // last index with cum[i] <= target
    let i = t.cum.partition_point(|&c| c <= target) - 1;
    dec.consume(t.cum[i], t.freq(i))?;
    if i < t.escape_index() {
        return Ok(t.lo + i as i32);
    }
    let raw = dec.decode_bits(BYPASS_BITS)? as i32;
    let v = raw - VALUE_BOUND - 1;
    if raw == 0 {
        return Err(Error::RangeDecode("invalid bypass value".into()));
    }
    Ok(v)
}

/// Bits the coder spends on `v` under `(mu, sigma)`.
pub fn model_cost_bits(v: i32, mu: f64, sigma: f64) -> f64 {
    -build_cdf(mu, sigma).probability(v).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_invariants() {
        for &(mu, sigma) in &[(0.0, 1.0), (3.3, 0.04), (-250.0, 20.0), (400.0, 1.0), (0.4, 0.1)] {
            let t = build_cdf(mu, sigma);
            assert_eq!(*t.cum.last().unwrap(), TOTAL);
            assert!(t.cum.windows(2).all(|w| w[1] > w[0]));
            assert!(t.lo >= -ALPHABET_BOUND && t.hi() <= ALPHABET_BOUND);
        }
    }

    #[test]
    fn symmetric_params_give_symmetric_table() {
        let t = build_cdf(0.0, 2.0);
        let n = t.symbols();
        for i in 0..n {
            let d = t.freq(i) as i64 - t.freq(n - 1 - i) as i64;
            assert!(d.abs() <= 1, "{i}: {d}");
        }
    }
}
