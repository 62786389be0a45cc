//! Dense 64-bit tensors and a tape-based reverse-mode autodiff engine.
//!
//! Image-like features are stored channels-last: `(frames, height, width,
//! channels)`. Every op on the [`Tape`] records enough to run its adjoint;
//! parameters live in a [`ParamStore`] and are pulled onto the tape as leaves.

mod checkpoint;
pub mod gradcheck;
mod ops;
mod param;
mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use param::{Init, ParamId, ParamStore, Parameter};
pub use tape::{Grads, Tape, Unary, Var};

use crate::error::{shape_err, Error, Result};

/// Row-major dense tensor of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Gather `out[i] = self[index[i]]` into a tensor of `shape`.
    pub fn gather(&self, index: &[usize], shape: &[usize]) -> Result<Tensor> {
        if index.len() != shape.iter().product::<usize>() {
            return Err(shape_err("gather", "index length does not match shape"));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: index.iter().map(|&i| self.data[i]).collect(),
        })
    }

    /// Entries `start..start + len` of the first axis.
    pub fn select_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        if self.shape.is_empty() || start + len > self.shape[0] {
            return Err(shape_err("select_rows", format!("{start}+{len} of {:?}", self.shape)));
        }
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor::new(shape, self.data[start * row..(start + len) * row].to_vec())
    }

    /// Channels `start..start + len` of the last dimension.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let c = self.last_dim();
        if start + len > c {
            return Err(shape_err("slice_last", format!("{start}+{len} of {c} channels")));
        }
        let data: Vec<f64> = self.data.chunks(c).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = len;
        Tensor::new(shape, data)
    }

    /// Concatenate along the first axis.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let mut shape = first.shape.clone();
        shape[0] = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != first.rank() || p.shape[1..] != first.shape[1..] {
                return Err(shape_err("concat_rows", format!("{:?} vs {:?}", p.shape, first.shape)));
            }
            shape[0] += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Tensor::new(shape, data)
    }

    /// Split along the last dimension into `n` equal parts.
    pub fn split_last(&self, n: usize) -> Result<Vec<Tensor>> {
        let c = self.last_dim();
        if n == 0 || c % n != 0 {
            return Err(shape_err(
                "split_channels",
                format!("{c} channels not divisible by {n}"),
            ));
        }
        let part = c / n;
        let rows = self.data.len() / c.max(1);
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = part;
        Ok((0..n)
            .map(|k| {
                let mut data = Vec::with_capacity(rows * part);
                for r in 0..rows {
                    data.extend_from_slice(&self.data[r * c + k * part..r * c + (k + 1) * part]);
                }
                Tensor {
                    shape: shape.clone(),
                    data,
                }
            })
            .collect())
    }

    /// Concatenate along the last dimension.
    pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let lead = &first.shape[..first.rank().saturating_sub(1)];
        let rows: usize = lead.iter().product();
        let mut total = 0;
        for p in parts {
            if &p.shape[..p.rank().saturating_sub(1)] != lead {
                return Err(shape_err("concat_channels", "leading dims differ"));
            }
            total += p.last_dim();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let c = p.last_dim();
                data.extend_from_slice(&p.data[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Tensor { shape, data })
    }
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Source indices realizing `permute(x, axes)`: output axis `i` is input
/// axis `axes[i]`.
pub fn permute_index(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(shape_err("permute", format!("{axes:?} for rank {rank}")));
    }
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(shape_err("permute", format!("invalid axes {axes:?}")));
        }
        seen[a] = true;
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n: usize = shape.iter().product();
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    for _ in 0..n {
        let src: usize = counter
            .iter()
            .zip(axes)
            .map(|(&c, &a)| c * in_strides[a])
            .sum();
        index.push(src);
        for d in (0..rank).rev() {
            counter[d] += 1;
            if counter[d] < out_shape[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    Ok((index, out_shape))
}

/// Source indices realizing a flip along each axis in `axes`.
pub fn flip_index(shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    let rank = shape.len();
    if axes.iter().any(|&a| a >= rank) {
        return Err(shape_err("flip", format!("invalid axes {axes:?}")));
    }
    let st = strides(shape);
    let mut flip = vec![false; rank];
    for &a in axes {
        flip[a] = !flip[a];
    }
    let n: usize = shape.iter().product();
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    for _ in 0..n {
        let src: usize = (0..rank)
            .map(|d| {
                let c = if flip[d] {
                    shape[d] - 1 - counter[d]
                } else {
                    counter[d]
                };
                c * st[d]
            })
            .sum();
        index.push(src);
        for d in (0..rank).rev() {
            counter[d] += 1;
            if counter[d] < shape[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |i| i as f64)
    }

    #[test]
    fn split_then_concat_is_identity() {
        let x = ramp(&[2, 3, 6]);
        let parts = x.split_last(2).unwrap();
        let refs: Vec<&Tensor> = parts.iter().collect();
        assert_eq!(Tensor::concat_last(&refs).unwrap(), x);
    }

    #[test]
    fn split_rejects_indivisible() {
        assert!(ramp(&[2, 5]).split_last(2).is_err());
    }

    #[test]
    fn flip_twice_is_identity() {
        let x = ramp(&[2, 3, 4]);
        let idx = flip_index(x.shape(), &[0, 2]).unwrap();
        let once = x.gather(&idx, x.shape()).unwrap();
        assert_ne!(once, x);
        let twice = once.gather(&idx, x.shape()).unwrap();
        assert_eq!(twice, x);
    }

    #[test]
    fn permute_inverse_roundtrip() {
        let x = ramp(&[2, 3, 4, 5]);
        let axes = [2, 0, 3, 1];
        let (idx, shape) = permute_index(x.shape(), &axes).unwrap();
        let y = x.gather(&idx, &shape).unwrap();
        let mut inv = [0; 4];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        let (idx2, shape2) = permute_index(&shape, &inv).unwrap();
        assert_eq!(y.gather(&idx2, &shape2).unwrap(), x);
    }

    #[test]
    fn permute_rejects_bad_axes() {
        assert!(permute_index(&[2, 3], &[0, 0]).is_err());
        assert!(permute_index(&[2, 3], &[0, 2]).is_err());
        assert!(flip_index(&[2, 3], &[5]).is_err());
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
