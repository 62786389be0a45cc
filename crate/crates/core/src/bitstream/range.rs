//! 32-bit range coder with byte-wise renormalization and carry propagation.
//!
//! Frequencies are given against a total of `2^PRECISION`. The leading byte
//! of the classic carry-less layout is always zero and is not stored; the
//! flush writes only as many bytes as needed to pin a value inside the final
//! interval, and trailing zero bytes are dropped. The decoder reads zeros
//! past the end of its input.

use crate::error::{Error, Result};

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
const TOP: u32 = 1 << 24;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    skip_first: bool,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
            skip_first: true,
        }
    }

    /// Code the interval `[start, start + freq)` of `TOTAL`.
    pub fn encode(&mut self, start: u32, freq: u32) {
        debug_assert!(freq > 0 && start + freq <= TOTAL);
        let r = self.range >> PRECISION;
        self.low += u64::from(r) * u64::from(start);
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Write `bits` (at most 16) raw bits.
    pub fn encode_bits(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= PRECISION && value < (1 << bits));
        let r = self.range >> bits;
        self.low += u64::from(r) * u64::from(value);
        self.range = r;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                if self.skip_first {
                    self.skip_first = false;
                } else {
                    self.out.push(temp.wrapping_add(carry));
                }
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        // smallest value in [low, low + range) whose low 24 bits are zero
        self.low = (self.low + u64::from(TOP - 1)) & !u64::from(TOP - 1);
        self.shift_low();
        self.shift_low();
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
    r: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
            r: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte());
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Cumulative-frequency target of the next symbol; follow with
    /// [`RangeDecoder::consume`].
    pub fn peek(&mut self) -> Result<u32> {
        self.r = self.range >> PRECISION;
        let v = self.code / self.r;
        if v >= TOTAL {
            return Err(Error::RangeDecode("code value outside the coded range".into()));
        }
        Ok(v)
    }

    pub fn consume(&mut self, start: u32, freq: u32) -> Result<()> {
        if freq == 0 || start + freq > TOTAL || self.code < self.r * start {
            return Err(Error::RangeDecode("symbol interval does not contain the code".into()));
        }
        self.code -= self.r * start;
        self.range = self.r * freq;
        if self.code >= self.range {
            return Err(Error::RangeDecode("symbol interval does not contain the code".into()));
        }
        self.normalize();
        Ok(())
    }

    pub fn decode_bits(&mut self, bits: u32) -> Result<u32> {
        let r = self.range >> bits;
        let v = self.code / r;
        if v >= 1 << bits {
            return Err(Error::RangeDecode("bypass value out of range".into()));
        }
        self.code -= r * v;
        self.range = r;
        self.normalize();
        Ok(v)
    }

    fn normalize(&mut self) {
        while self.range < TOP {
            self.code = (self.code << 8) | u32::from(self.next_byte());
            self.range <<= 8;
        }
    }

    /// True when every stored byte has been consumed.
    pub fn exhausted(&self) -> bool {
        self.pos >= self.data.len()
    }
}
