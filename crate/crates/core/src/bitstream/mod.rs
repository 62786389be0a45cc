//! Range coding of quantized Gaussians and the container format.

pub mod cdf;
pub mod container;
pub mod range;

pub use cdf::{build_cdf, decode_value, encode_value, model_cost_bits, CdfTable, ALPHABET_BOUND, VALUE_BOUND};
pub use container::{gop_lengths, pack, unpack, GopPayload, Header, HEADER_LEN, MAGIC, VERSION};
pub use range::{RangeDecoder, RangeEncoder, PRECISION, TOTAL};

use crate::error::Result;

/// Encode `symbols[i]` under `N(mu[i], sigma[i]^2)` into one stream.
pub fn encode_gaussian(symbols: &[i32], mu: &[f64], sigma: &[f64]) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    for ((&v, &m), &s) in symbols.iter().zip(mu).zip(sigma) {
        encode_value(&mut enc, v, m, s)?;
    }
    Ok(enc.finish())
}

/// Inverse of [`encode_gaussian`] for `mu.len()` symbols.
pub fn decode_gaussian(bytes: &[u8], mu: &[f64], sigma: &[f64]) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(bytes);
    let out = mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| decode_value(&mut dec, m, s))
        .collect::<Result<Vec<_>>>()?;
    if !dec.exhausted() {
        return Err(crate::error::Error::RangeDecode("unused bytes after the last symbol".into()));
    }
    Ok(out)
}
