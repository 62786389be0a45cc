//! Container layout (little-endian):
//!
//! ```text
//! "GTEM" | version u8 | flags u8 | width u16 | height u16 | frame_count u16
//!        | gop_size u8 | lambda_index u8 | model_hash u64 | crc32 u32
//! ```
//!
//! 26 bytes, followed for each GOP by the hyper-latent segment and then, per
//! frame, five slice segments. Every segment is a `u32` length and its
//! bytes. The CRC covers everything after the header. GOP lengths follow
//! from `frame_count` and `gop_size` (the last GOP may be short), so the
//! container parses without the model.

use crate::codec::{Preset, NUM_SLICES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GTEM";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u8,
    pub preset: Preset,
    pub width: u16,
    pub height: u16,
    pub frame_count: u16,
    pub gop_size: u8,
    pub lambda_index: u8,
    pub model_hash: u64,
    pub crc32: u32,
}

impl Header {
    pub fn gop_lengths(&self) -> Vec<usize> {
        gop_lengths(usize::from(self.frame_count), usize::from(self.gop_size))
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.push(self.preset.flag_bit());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.frame_count.to_le_bytes());
        out.push(self.gop_size);
        out.push(self.lambda_index);
        out.extend_from_slice(&self.model_hash.to_le_bytes());
        out.extend_from_slice(&self.crc32.to_le_bytes());
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Bitstream(format!("truncated header: {} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Bitstream("bad magic".into()));
        }
        let version = bytes[4];
        if version != VERSION {
            return Err(Error::Bitstream(format!("unsupported version {version}")));
        }
        let flags = bytes[5];
        if flags & !1 != 0 {
            return Err(Error::Bitstream(format!("unknown flags {flags:#x}")));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let h = Header {
            version,
            preset: Preset::from_flag_bit(flags),
            width: u16_at(6),
            height: u16_at(8),
            frame_count: u16_at(10),
            gop_size: bytes[12],
            lambda_index: bytes[13],
            model_hash: u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes")),
            crc32: u32::from_le_bytes(bytes[22..26].try_into().expect("4 bytes")),
        };
        if h.gop_size == 0 {
            return Err(Error::Bitstream("zero GOP size".into()));
        }
        Ok(h)
    }
}

/// Frame counts of consecutive GOPs.
pub fn gop_lengths(frames: usize, gop: usize) -> Vec<usize> {
    if gop == 0 {
        return Vec::new();
    }
    (0..frames).step_by(gop).map(|s| gop.min(frames - s)).collect()
}

/// Coded payload of one GOP.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GopPayload {
    pub z: Vec<u8>,
    /// Per frame, one range-coded stream per latent slice.
    pub frames: Vec<[Vec<u8>; NUM_SLICES]>,
}

impl GopPayload {
    pub fn byte_len(&self) -> usize {
        4 + self.z.len() + self.frames.iter().flatten().map(|s| 4 + s.len()).sum::<usize>()
    }
}

fn put_segment(out: &mut Vec<u8>, seg: &[u8]) -> Result<()> {
    let len = u32::try_from(seg.len()).map_err(|_| Error::Bitstream("segment too long".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(seg);
    Ok(())
}

/// Serialize the header (with its CRC filled in) and payloads.
pub fn pack(header: &Header, gops: &[GopPayload]) -> Result<Vec<u8>> {
    let lengths = header.gop_lengths();
    if lengths.len() != gops.len() || lengths.iter().zip(gops).any(|(&n, g)| g.frames.len() != n) {
        return Err(Error::Bitstream(format!(
            "payload layout does not match {} frames in GOPs of {}",
            header.frame_count, header.gop_size
        )));
    }
    let mut body = Vec::new();
    for g in gops {
        put_segment(&mut body, &g.z)?;
        for f in &g.frames {
            for s in f {
                put_segment(&mut body, s)?;
            }
        }
    }
    let mut h = *header;
    h.crc32 = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    h.write(&mut out);
    out.extend_from_slice(&body);
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn segment(&mut self) -> Result<Vec<u8>> {
        let need = |n: usize, pos: usize, len: usize| {
            if pos + n > len {
                Err(Error::Bitstream("truncated segment".into()))
            } else {
                Ok(())
            }
        };
        need(4, self.pos, self.data.len())?;
        let len = u32::from_le_bytes(self.data[self.pos..self.pos + 4].try_into().expect("4 bytes")) as usize;
        self.pos += 4;
        need(len, self.pos, self.data.len())?;
        let s = self.data[self.pos..self.pos + len].to_vec();
        self.pos += len;
        Ok(s)
    }
}

/// Parse and checksum a container.
pub fn unpack(bytes: &[u8]) -> Result<(Header, Vec<GopPayload>)> {
    let header = Header::parse(bytes)?;
    let body = &bytes[HEADER_LEN..];
    let found = crc32fast::hash(body);
    if found != header.crc32 {
        return Err(Error::Checksum {
            expected: header.crc32,
            found,
        });
    }
    let mut r = Reader { data: body, pos: 0 };
    let mut gops = Vec::new();
    for n in header.gop_lengths() {
        let z = r.segment()?;
        let mut frames = Vec::with_capacity(n);
        for _ in 0..n {
            let mut slices: [Vec<u8>; NUM_SLICES] = Default::default();
            for s in slices.iter_mut() {
                *s = r.segment()?;
            }
            frames.push(slices);
        }
        gops.push(GopPayload { z, frames });
    }
    if r.pos != body.len() {
        return Err(Error::Bitstream(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok((header, gops))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Header, Vec<GopPayload>) {
        let header = Header {
            version: VERSION,
            preset: Preset::Tiny,
            width: 64,
            height: 48,
            frame_count: 3,
            gop_size: 2,
            lambda_index: 1,
            model_hash: 0xdead_beef_0123_4567,
            crc32: 0,
        };
        let gop = |n: usize, seed: u8| GopPayload {
            z: vec![seed; 3],
            frames: (0..n)
                .map(|f| std::array::from_fn(|s| vec![seed + f as u8 + s as u8; s + 1]))
                .collect(),
        };
        (header, vec![gop(2, 1), gop(1, 9)])
    }

    #[test]
    fn round_trip_and_header_size() {
        let (h, gops) = sample();
        let bytes = pack(&h, &gops).unwrap();
        let (h2, g2) = unpack(&bytes).unwrap();
        assert_eq!(g2, gops);
        assert_eq!(h2.frame_count, 3);
        let payload: usize = gops.iter().map(GopPayload::byte_len).sum();
        assert_eq!(bytes.len(), HEADER_LEN + payload);
    }

    #[test]
    fn corruption_is_detected() {
        let (h, gops) = sample();
        let mut bytes = pack(&h, &gops).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert!(matches!(unpack(&bytes), Err(Error::Checksum { .. })));
        bytes.truncate(10);
        assert!(unpack(&bytes).is_err());
    }

    #[test]
    fn short_final_gop() {
        assert_eq!(gop_lengths(96, 8).len(), 12);
        assert_eq!(gop_lengths(10, 4), vec![4, 4, 2]);
    }
}
