//! Reversible re-orderings of a video feature that select the scan direction.
//!
//! Features are `(T, H, W, C)`. A single forward scan over the row-major
//! flattening of `(T, H, W)` is the spatial-first forward order; the other
//! three orders are obtained by permuting the feature before the scan and
//! undoing the permutation afterwards:
//!
//! | order | transpose | flip | transformed shape |
//! |-------|-----------|------|-------------------|
//! | FST   | no        | no   | `(T, H, W, C)`    |
//! | BST   | no        | yes  | `(T, H, W, C)`    |
//! | FTS   | yes       | no   | `(H, W, T, C)`    |
//! | BTS   | yes       | yes  | `(H, W, T, C)`    |
//!
//! "Transpose" moves time innermost so consecutive scan steps visit the same
//! raster position in successive frames. "Flip" reverses all three leading
//! axes, which reverses the flattened sequence.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{flip_index, permute_index, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanOrder {
    /// Forward spatial-temporal: frame by frame, raster within a frame.
    Fst,
    /// Backward spatial-temporal.
    Bst,
    /// Forward temporal-spatial: all frames at one position, then the next.
    Fts,
    /// Backward temporal-spatial.
    Bts,
}

impl ScanOrder {
    /// Cascade order used by the CMM.
    pub const ALL: [ScanOrder; 4] = [ScanOrder::Fst, ScanOrder::Bst, ScanOrder::Fts, ScanOrder::Bts];

    pub fn transposed(self) -> bool {
        matches!(self, ScanOrder::Fts | ScanOrder::Bts)
    }

    pub fn flipped(self) -> bool {
        matches!(self, ScanOrder::Bst | ScanOrder::Bts)
    }

    pub fn tag(self) -> &'static str {
        match self {
            ScanOrder::Fst => "fst",
            ScanOrder::Bst => "bst",
            ScanOrder::Fts => "fts",
            ScanOrder::Bts => "bts",
        }
    }
}

impl fmt::Display for ScanOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag().to_uppercase())
    }
}

impl FromStr for ScanOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fst" => Ok(ScanOrder::Fst),
            "bst" => Ok(ScanOrder::Bst),
            "fts" => Ok(ScanOrder::Fts),
            "bts" => Ok(ScanOrder::Bts),
            _ => Err(Error::InvalidArgument(format!("unknown scan order {s}"))),
        }
    }
}

const TO_TEMPORAL_FIRST: [usize; 4] = [1, 2, 0, 3];
const FROM_TEMPORAL_FIRST: [usize; 4] = [2, 0, 1, 3];
const LEADING: [usize; 3] = [0, 1, 2];

fn check_rank(shape: &[usize]) -> Result<()> {
    if shape.len() != 4 {
        return Err(shape_err("scan transform", format!("expected (T,H,W,C), got {shape:?}")));
    }
    Ok(())
}

/// Gather indices realizing the forward transform, plus the output shape.
pub fn transform_index(shape: &[usize], order: ScanOrder) -> Result<(Vec<usize>, Vec<usize>)> {
    check_rank(shape)?;
    let (mut index, out_shape): (Vec<usize>, Vec<usize>) = if order.transposed() {
        permute_index(shape, &TO_TEMPORAL_FIRST)?
    } else {
        ((0..shape.iter().product()).collect(), shape.to_vec())
    };
    if order.flipped() {
        let flip = flip_index(&out_shape, &LEADING)?;
        index = flip.iter().map(|&i| index[i]).collect();
    }
    Ok((index, out_shape))
}

/// Gather indices realizing the inverse transform from a transformed shape.
pub fn inverse_index(shape: &[usize], order: ScanOrder) -> Result<(Vec<usize>, Vec<usize>)> {
    check_rank(shape)?;
    let mut index: Vec<usize> = if order.flipped() {
        flip_index(shape, &LEADING)?
    } else {
        (0..shape.iter().product()).collect()
    };
    let mut out_shape = shape.to_vec();
    if order.transposed() {
        let (perm, s) = permute_index(shape, &FROM_TEMPORAL_FIRST)?;
        index = perm.iter().map(|&i| index[i]).collect();
        out_shape = s;
    }
    Ok((index, out_shape))
}

pub fn apply_transform(x: &Tensor, order: ScanOrder) -> Result<Tensor> {
    let (idx, shape) = transform_index(x.shape(), order)?;
    x.gather(&idx, &shape)
}

pub fn inverse_transform(x: &Tensor, order: ScanOrder) -> Result<Tensor> {
    let (idx, shape) = inverse_index(x.shape(), order)?;
    x.gather(&idx, &shape)
}

/// Tape version of [`apply_transform`]; FST records nothing.
pub fn apply_on_tape(tape: &mut Tape, x: Var, order: ScanOrder) -> Result<Var> {
    if order == ScanOrder::Fst {
        check_rank(tape.shape(x))?;
        return Ok(x);
    }
    let (idx, shape) = transform_index(tape.shape(x), order)?;
    tape.gather(x, idx, &shape)
}

/// Tape version of [`inverse_transform`].
pub fn inverse_on_tape(tape: &mut Tape, x: Var, order: ScanOrder) -> Result<Var> {
    if order == ScanOrder::Fst {
        check_rank(tape.shape(x))?;
        return Ok(x);
    }
    let (idx, shape) = inverse_index(tape.shape(x), order)?;
    tape.gather(x, idx, &shape)
}

/// The `(frame, raster position)` visited at each step of a scan in `order`
/// over a `T x H x W` feature.
pub fn scan_sequence(frames: usize, height: usize, width: usize, order: ScanOrder) -> Result<Vec<(usize, usize)>> {
    let hw = height * width;
    let coords = Tensor::from_fn(&[frames, height, width, 1], |i| i as f64);
    let t = apply_transform(&coords, order)?;
    Ok(t.data()
        .iter()
        .map(|&v| {
            let v = v as usize;
            (v / hw, v % hw)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fst_is_identity() {
        let x = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64);
        assert_eq!(apply_transform(&x, ScanOrder::Fst).unwrap(), x);
    }

    #[test]
    fn two_by_two_orders() {
        let fst = scan_sequence(2, 2, 2, ScanOrder::Fst).unwrap();
        assert_eq!(fst[..5], [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)]);
        let fts = scan_sequence(2, 2, 2, ScanOrder::Fts).unwrap();
        assert_eq!(fts[..4], [(0, 0), (1, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn backward_orders_reverse_forward_ones() {
        for (fwd, bwd) in [(ScanOrder::Fst, ScanOrder::Bst), (ScanOrder::Fts, ScanOrder::Bts)] {
            let mut f = scan_sequence(3, 2, 3, fwd).unwrap();
            f.reverse();
            assert_eq!(f, scan_sequence(3, 2, 3, bwd).unwrap());
        }
    }

    #[test]
    fn rejects_wrong_rank() {
        assert!(apply_transform(&Tensor::zeros(&[2, 2]), ScanOrder::Bst).is_err());
    }

    #[test]
    fn parse_and_display() {
        for o in ScanOrder::ALL {
            assert_eq!(o.to_string().parse::<ScanOrder>().unwrap(), o);
        }
    }
}
