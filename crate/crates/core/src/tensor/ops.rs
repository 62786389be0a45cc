use super::tape::{Node, Op, Tape, Unary, Var};
use super::{flip_index, permute_index, Tensor};
use crate::entropy::gaussian;
use crate::error::{shape_err, Error, Result};
use crate::{entropy, geom};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary_forward(f: Unary, x: f64) -> f64 {
    match f {
        Unary::Silu => x * sigmoid(x),
        Unary::Gelu => 0.5 * x * (1.0 + libm::erf(x / SQRT_2)),
        Unary::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Abs => x.abs(),
        Unary::Sqrt => x.sqrt(),
        Unary::Square => x * x,
        Unary::Neg => -x,
    }
}

fn unary_derivative(f: Unary, x: f64, y: f64) -> f64 {
    match f {
        Unary::Silu => {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        }
        Unary::Gelu => {
            0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
        }
        Unary::Softplus => sigmoid(x),
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Sqrt => {
            if y > 0.0 {
                0.5 / y
            } else {
                0.0
            }
        }
        Unary::Square => 2.0 * x,
        Unary::Neg => -1.0,
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("op produced consistent shape")
}

/// Geometry of a 2-D convolution over channels-last input.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub ci: usize,
    pub kh: usize,
    pub kw: usize,
    pub co: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad: usize,
}

pub(crate) fn conv_geom(
    x: &[usize],
    k: &[usize],
    stride: usize,
    pad: usize,
    depthwise: bool,
) -> Result<ConvGeom> {
    if stride < 1 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    if x.len() != 4 {
        return Err(shape_err("conv2d", format!("input must be rank 4, got {x:?}")));
    }
    let (n, h, w, ci) = (x[0], x[1], x[2], x[3]);
    let (kh, kw, co) = if depthwise {
        if k.len() != 3 || k[2] != ci {
            return Err(shape_err(
                "conv2d",
                format!("depthwise kernel {k:?} for {ci} channels"),
            ));
        }
        (k[0], k[1], ci)
    } else {
        if k.len() != 4 || k[2] != ci {
            return Err(shape_err("conv2d", format!("kernel {k:?} for {ci} channels")));
        }
        (k[0], k[1], k[3])
    };
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(shape_err("conv2d", format!("kernel {kh}x{kw} is not odd-sized")));
    }
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    Ok(ConvGeom {
        n,
        h,
        w,
        ci,
        kh,
        kw,
        co,
        ho: (h + 2 * pad - kh) / stride + 1,
        wo: (w + 2 * pad - kw) / stride + 1,
        stride,
        pad,
    })
}

/// Visit every (output pixel, kernel tap, input pixel) triple of a convolution.
#[inline]
fn for_each_tap(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    for n in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let out = (n * g.ho + oy) * g.wo + ox;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let inp = (n * g.h + iy as usize) * g.w + ix as usize;
                        f(out, ky * g.kw + kx, inp);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], k: &[f64], depthwise: bool) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.ho * g.wo * g.co];
    let (ci, co) = (g.ci, g.co);
    if depthwise {
        for_each_tap(g, |o, tap, i| {
            let dst = &mut out[o * co..(o + 1) * co];
            let src = &x[i * ci..(i + 1) * ci];
            let kr = &k[tap * ci..(tap + 1) * ci];
            for c in 0..ci {
                dst[c] += src[c] * kr[c];
            }
        });
    } else {
        for_each_tap(g, |o, tap, i| {
            let dst = &mut out[o * co..(o + 1) * co];
            let src = &x[i * ci..(i + 1) * ci];
            let kbase = tap * ci * co;
            for (c, &xv) in src.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let kr = &k[kbase + c * co..kbase + (c + 1) * co];
                for (d, kv) in dst.iter_mut().zip(kr) {
                    *d += xv * kv;
                }
            }
        });
    }
    out
}

fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    k: &[f64],
    gout: &[f64],
    depthwise: bool,
    mut gx: Option<&mut Vec<f64>>,
    mut gk: Option<&mut Vec<f64>>,
) {
    let (ci, co) = (g.ci, g.co);
    for_each_tap(g, |o, tap, i| {
        let go = &gout[o * co..(o + 1) * co];
        if depthwise {
            if let Some(gx) = gx.as_deref_mut() {
                let kr = &k[tap * ci..(tap + 1) * ci];
                let dst = &mut gx[i * ci..(i + 1) * ci];
                for c in 0..ci {
                    dst[c] += go[c] * kr[c];
                }
            }
            if let Some(gk) = gk.as_deref_mut() {
                let src = &x[i * ci..(i + 1) * ci];
                let dst = &mut gk[tap * ci..(tap + 1) * ci];
                for c in 0..ci {
                    dst[c] += go[c] * src[c];
                }
            }
        } else {
            let kbase = tap * ci * co;
            if let Some(gx) = gx.as_deref_mut() {
                for c in 0..ci {
                    let kr = &k[kbase + c * co..kbase + (c + 1) * co];
                    let s: f64 = go.iter().zip(kr).map(|(a, b)| a * b).sum();
                    gx[i * ci + c] += s;
                }
            }
            if let Some(gk) = gk.as_deref_mut() {
                for c in 0..ci {
                    let xv = x[i * ci + c];
                    if xv == 0.0 {
                        continue;
                    }
                    let dst = &mut gk[kbase + c * co..kbase + (c + 1) * co];
                    for (d, gv) in dst.iter_mut().zip(go) {
                        *d += xv * gv;
                    }
                }
            }
        }
    });
}

fn matmul_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<(usize, usize, usize, usize)> {
    let split = |s: &[usize]| -> Result<(usize, usize, usize)> {
        match s.len() {
            2 => Ok((1, s[0], s[1])),
            3 => Ok((s[0], s[1], s[2])),
            _ => Err(shape_err("matmul", format!("rank {} operand", s.len()))),
        }
    };
    let (ba, ar, ac) = split(a)?;
    let (bb, br, bc) = split(b)?;
    if ba != bb {
        return Err(shape_err("matmul", format!("batch {ba} vs {bb}")));
    }
    let (m, k1) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k1 != k2 {
        return Err(shape_err("matmul", format!("{a:?} x {b:?} (ta={ta}, tb={tb})")));
    }
    Ok((ba, m, k1, n))
}

#[inline]
fn at(rows: usize, cols: usize, trans: bool, i: usize, j: usize) -> usize {
    // logical (i, j) of an operand stored as (rows, cols), optionally transposed
    if trans {
        j * cols + i
    } else {
        let _ = rows;
        i * cols + j
    }
}

impl Tape<'_> {
    /// Affine map over the last dimension: `x @ w + b`, `w` shaped `(in, out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let cin = *xs.last().unwrap_or(&1);
        if ws.len() != 2 || ws[0] != cin {
            return Err(shape_err("linear", format!("x {xs:?} with w {ws:?}")));
        }
        let cout = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("linear", format!("bias {:?}", self.shape(b))));
            }
        }
        let rows = self.value(x).len() / cin.max(1);
        let xd = self.data(x);
        let wd = self.data(w);
        let mut out = vec![0.0; rows * cout];
        for r in 0..rows {
            let dst = &mut out[r * cout..(r + 1) * cout];
            if let Some(b) = b {
                dst.copy_from_slice(self.data(b));
            }
            for (i, &xv) in xd[r * cin..(r + 1) * cin].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (d, wv) in dst.iter_mut().zip(&wd[i * cout..(i + 1) * cout]) {
                    *d += xv * wv;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = cout;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", tensor(shape, out), Op::Linear { x, w, b }, &inputs)
    }

    /// Cross-correlation with zero padding over `(N, H, W, C)` input.
    ///
    /// Dense kernels are `(kh, kw, cin, cout)`; depthwise kernels `(kh, kw, c)`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize, depthwise: bool) -> Result<Var> {
        let g = conv_geom(self.shape(x), self.shape(k), stride, pad, depthwise)?;
        let out = conv_forward(&g, self.data(x), self.data(k), depthwise);
        self.push(
            "conv2d",
            tensor(vec![g.n, g.ho, g.wo, g.co], out),
            Op::Conv2d {
                x,
                k,
                stride,
                pad,
                depthwise,
            },
            &[x, k],
        )
    }

    /// Add a per-channel bias over the last dimension.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(b) != [c] {
            return Err(shape_err("add_bias", format!("bias {:?} for {c} channels", self.shape(b))));
        }
        let bd = self.data(b).to_vec();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(&bd) {
                *o += bv;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("add_bias", tensor(shape, out), Op::AddBias { x, b }, &[x, b])
    }

    /// Multiply by a per-channel scale over the last dimension.
    pub fn mul_bias(&mut self, x: Var, s: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(s) != [c] {
            return Err(shape_err("mul_bias", format!("scale {:?} for {c} channels", self.shape(s))));
        }
        let sd = self.data(s).to_vec();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(c) {
            for (o, sv) in row.iter_mut().zip(&sd) {
                *o *= sv;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("mul_bias", tensor(shape, out), Op::MulBias { x, s }, &[x, s])
    }

    /// Layer normalization over the last (channel) dimension.
    pub fn layernorm(&mut self, x: Var, g: Var, b: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("layernorm eps must be > 0".into()));
        }
        let c = self.value(x).last_dim();
        if self.shape(g) != [c] || self.shape(b) != [c] {
            return Err(shape_err("layernorm", format!("gamma/beta for {c} channels")));
        }
        let xd = self.data(x);
        let (gd, bd) = (self.data(g), self.data(b));
        let rows = xd.len() / c.max(1);
        let mut out = vec![0.0; xd.len()];
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let xh = (row[j] - mean) * rs;
                xhat[r * c + j] = xh;
                out[r * c + j] = xh * gd[j] + bd[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let track = self.any_grad(&[x, g, b]);
        let (xhat, rstd) = if track { (xhat, rstd) } else { (vec![], vec![]) };
        self.push("layernorm", tensor(shape, out), Op::LayerNorm { x, g, b, xhat, rstd }, &[x, g, b])
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var> {
        let out: Vec<f64> = self.data(x).iter().map(|&v| unary_forward(f, v)).collect();
        let shape = self.shape(x).to_vec();
        let name = match f {
            Unary::Silu => "silu",
            Unary::Gelu => "gelu",
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Abs => "abs",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Neg => "neg",
        };
        self.push(name, tensor(shape, out), Op::Unary { x, f }, &[x])
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Silu)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Gelu)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(name, tensor(shape, out), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out: Vec<f64> = self.data(x).iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", tensor(shape, out), Op::Scale { x, s }, &[x])
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if index.len() != shape.iter().product::<usize>() || index.iter().any(|&i| i >= n) {
            return Err(shape_err("gather", "index out of range or wrong length"));
        }
        let xd = self.data(x);
        let out: Vec<f64> = index.iter().map(|&i| xd[i]).collect();
        self.push("gather", tensor(shape.to_vec(), out), Op::Gather { x, index }, &[x])
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let (index, shape) = permute_index(self.shape(x), axes)?;
        self.gather(x, index, &shape)
    }

    pub fn flip(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let index = flip_index(&shape, axes)?;
        self.gather(x, index, &shape)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push("reshape", t, Op::Reshape { x }, &[x])
    }

    /// Channels `start..start+len` of the last dimension.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let c = self.value(x).last_dim();
        if start + len > c {
            return Err(shape_err("slice_channels", format!("{start}+{len} > {c}")));
        }
        let xd = self.data(x);
        let rows = xd.len() / c.max(1);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xd[r * c + start..r * c + start + len]);
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = len;
        self.push("slice_channels", tensor(shape, out), Op::Slice { x, start }, &[x])
    }

    /// Split the last dimension evenly into `n` parts.
    pub fn split_channels(&mut self, x: Var, n: usize) -> Result<Vec<Var>> {
        let c = self.value(x).last_dim();
        if n == 0 || c % n != 0 {
            return Err(shape_err("split_channels", format!("{c} channels not divisible by {n}")));
        }
        let part = c / n;
        (0..n).map(|k| self.slice_channels(x, k * part, part)).collect()
    }

    /// Entries `start..start+len` of the first axis.
    pub fn select_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(shape_err("select_rows", format!("{start}+{len} of {shape:?}")));
        }
        let row: usize = shape[1..].iter().product();
        let out = self.data(x)[start * row..(start + len) * row].to_vec();
        let mut s = shape;
        s[0] = len;
        self.push("select_rows", tensor(s, out), Op::Rows { x, start }, &[x])
    }

    /// Concatenate along the first axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?).to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(shape_err("concat_rows", format!("{s:?} vs {first:?}")));
            }
            rows += s[0];
            out.extend_from_slice(self.data(v));
        }
        let mut shape = first;
        shape[0] = rows;
        self.push("concat_rows", tensor(shape, out), Op::ConcatRows { xs: xs.to_vec() }, xs)
    }

    /// Concatenate along the last dimension.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let t = Tensor::concat_last(&parts)?;
        self.push("concat_channels", t, Op::Concat { xs: xs.to_vec() }, xs)
    }

    /// Nearest-neighbour 2x upsampling of `(N, H, W, C)`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err("upsample2", format!("{s:?}")));
        }
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let mut index = Vec::with_capacity(n * h * w * c * 4);
        for b in 0..n {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let base = ((b * h + y / 2) * w + xx / 2) * c;
                    index.extend(base..base + c);
                }
            }
        }
        self.gather(x, index, &[n, 2 * h, 2 * w, c])
    }

    /// Selective state-space scan; see [`crate::geom::scan`].
    ///
    /// `u`, `delta`: `(L, D)`; `a`: `(D, N)`; `b`, `c`: `(L, N)`; `d`: `(D)`.
    pub fn selective_scan(&mut self, u: Var, delta: Var, a: Var, b: Var, c: Var, d: Var) -> Result<Var> {
        let us = self.shape(u).to_vec();
        if us.len() != 2 {
            return Err(shape_err("selective_scan", format!("u {us:?}")));
        }
        let (len, dim) = (us[0], us[1]);
        let as_ = self.shape(a).to_vec();
        if as_.len() != 2 || as_[0] != dim {
            return Err(shape_err("selective_scan", format!("A {as_:?}")));
        }
        let nstate = as_[1];
        if self.shape(delta) != us.as_slice()
            || self.shape(b) != [len, nstate]
            || self.shape(c) != [len, nstate]
            || self.shape(d) != [dim]
        {
            return Err(shape_err("selective_scan", "inconsistent delta/B/C/D shapes"));
        }
        let save = self.any_grad(&[u, delta, a, b, c, d]);
        let dims = geom::scan::ScanDims { len, dim, nstate };
        let out = if save {
            geom::scan::forward(
                &dims,
                self.data(u),
                self.data(delta),
                self.data(a),
                self.data(b),
                self.data(c),
                self.data(d),
                true,
            )
        } else {
            let y = geom::scan::forward_blocked(
                &dims,
                self.data(u),
                self.data(delta),
                self.data(a),
                self.data(b),
                self.data(c),
                self.data(d),
                geom::scan::DEFAULT_BLOCK,
            );
            geom::scan::ScanOutput {
                y,
                states: Vec::new(),
                decay: Vec::new(),
            }
        };
        self.push(
            "selective_scan",
            tensor(vec![len, dim], out.y),
            Op::Scan {
                u,
                delta,
                a,
                b,
                c,
                d,
                states: out.states,
                decay: out.decay,
            },
            &[u, delta, a, b, c, d],
        )
    }

    /// Backward bilinear warp with border clamping; see [`crate::entropy::warp`].
    pub fn warp(&mut self, x: Var, flow: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let fs = self.shape(flow);
        if xs.len() != 4 || fs != [xs[0], xs[1], xs[2], 2] {
            return Err(shape_err("warp", format!("feature {xs:?} flow {fs:?}")));
        }
        let out = entropy::warp::forward(&xs, self.data(x), self.data(flow));
        self.push("warp", tensor(xs, out), Op::Warp { x, flow }, &[x, flow])
    }

    /// Batched matrix product with optional operand transposes.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n) = matmul_dims(&sa, &sb, ta, tb)?;
        let (ar, ac) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (br, bc) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; batch * m * n];
        for bt in 0..batch {
            let ao = bt * ar * ac;
            let bo = bt * br * bc;
            for i in 0..m {
                for p in 0..k {
                    let av = ad[ao + at(ar, ac, ta, i, p)];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[(bt * m + i) * n + j] += av * bd[bo + at(br, bc, tb, p, j)];
                    }
                }
            }
        }
        let shape = if sa.len() == 2 && sb.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        self.push("matmul", tensor(shape, out), Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("softmax", tensor(shape, out), Op::Softmax { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// `max(x, bound)`; the gradient still flows where it would raise `x`.
    pub fn lower_bound(&mut self, x: Var, bound: f64) -> Result<Var> {
        let out: Vec<f64> = self.data(x).iter().map(|v| v.max(bound)).collect();
        let shape = self.shape(x).to_vec();
        self.push("lower_bound", tensor(shape, out), Op::LowerBound { x, bound }, &[x])
    }

    /// Rounding (half away from zero) with the identity as gradient surrogate.
    pub fn round_ste(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f64> = self.data(x).iter().map(|v| v.round()).collect();
        let shape = self.shape(x).to_vec();
        self.push("round_ste", tensor(shape, out), Op::Straight { x }, &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let out: Vec<f64> = self.data(x).iter().map(|v| v.clamp(lo, hi)).collect();
        let shape = self.shape(x).to_vec();
        self.push("clamp", tensor(shape, out), Op::Clamp { x, lo, hi }, &[x])
    }

    /// Probability mass of the unit bin around `y` under `N(mu, sigma^2)`,
    /// floored at `floor`.
    pub fn gaussian_likelihood(&mut self, y: Var, mu: Var, sigma: Var, floor: f64) -> Result<Var> {
        same_shape("likelihood", self.value(y), self.value(mu))?;
        same_shape("likelihood", self.value(y), self.value(sigma))?;
        let out: Vec<f64> = self
            .data(y)
            .iter()
            .zip(self.data(mu))
            .zip(self.data(sigma))
            .map(|((&y, &m), &s)| gaussian::bin_probability(y, m, s).max(floor))
            .collect();
        let shape = self.shape(y).to_vec();
        self.push(
            "likelihood",
            tensor(shape, out),
            Op::Likelihood { y, mu, sigma, floor },
            &[y, mu, sigma],
        )
    }

    /// Apply the same 9x9 linear map to every channel of a `(3, 3, C)` kernel.
    pub fn kernel_map(&mut self, k: Var, map: &[[f64; 9]; 9]) -> Result<Var> {
        let s = self.shape(k).to_vec();
        if s.len() != 3 || s[0] != 3 || s[1] != 3 {
            return Err(shape_err("kernel_map", format!("expected (3,3,C) kernel, got {s:?}")));
        }
        let c = s[2];
        let kd = self.data(k);
        let mut out = vec![0.0; kd.len()];
        for p in 0..9 {
            for q in 0..9 {
                let m = map[p][q];
                if m == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    out[p * c + ch] += m * kd[q * c + ch];
                }
            }
        }
        self.push(
            "kernel_map",
            tensor(s, out),
            Op::KernelMap {
                k,
                map: Box::new(*map),
            },
            &[k],
        )
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, contrib: impl IntoIterator<Item = f64>) {
    if let Some(dst) = slot(grads, nodes, v) {
        for (d, c) in dst.iter_mut().zip(contrib) {
            *d += c;
        }
    }
}

pub(crate) fn backward_node(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    let val = |v: Var| nodes[v.0].value.data();
    let out = nodes[i].value.data();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Linear { x, w, b } => {
            let cin = nodes[w.0].value.shape()[0];
            let cout = nodes[w.0].value.shape()[1];
            let rows = g.len() / cout.max(1);
            let (xd, wd) = (val(*x), val(*w));
            if let Some(gx) = slot(grads, nodes, *x) {
                for r in 0..rows {
                    let go = &g[r * cout..(r + 1) * cout];
                    for ii in 0..cin {
                        let wr = &wd[ii * cout..(ii + 1) * cout];
                        gx[r * cin + ii] += go.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            if let Some(gw) = slot(grads, nodes, *w) {
                for r in 0..rows {
                    let go = &g[r * cout..(r + 1) * cout];
                    for ii in 0..cin {
                        let xv = xd[r * cin + ii];
                        if xv == 0.0 {
                            continue;
                        }
                        for (d, gv) in gw[ii * cout..(ii + 1) * cout].iter_mut().zip(go) {
                            *d += xv * gv;
                        }
                    }
                }
            }
            if let Some(b) = b {
                if let Some(gb) = slot(grads, nodes, *b) {
                    for row in g.chunks(cout) {
                        for (d, gv) in gb.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
            }
        }
        Op::Conv2d {
            x,
            k,
            stride,
            pad,
            depthwise,
        } => {
            let geom = conv_geom(nodes[x.0].value.shape(), nodes[k.0].value.shape(), *stride, *pad, *depthwise)?;
            // Two passes keep the mutable borrows of `grads` disjoint.
            if nodes[x.0].requires_grad {
                let gx = slot(grads, nodes, *x);
                conv_backward(&geom, val(*x), val(*k), g, *depthwise, gx, None);
            }
            if nodes[k.0].requires_grad {
                let gk = slot(grads, nodes, *k);
                conv_backward(&geom, val(*x), val(*k), g, *depthwise, None, gk);
            }
        }
        Op::AddBias { x, b } => {
            accumulate(grads, nodes, *x, g.iter().copied());
            let c = nodes[b.0].value.len();
            if let Some(gb) = slot(grads, nodes, *b) {
                for row in g.chunks(c) {
                    for (d, gv) in gb.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
            }
        }
        Op::MulBias { x, s } => {
            let c = nodes[s.0].value.len();
            let (xd, sd) = (val(*x), val(*s));
            if let Some(gx) = slot(grads, nodes, *x) {
                for (j, (d, gv)) in gx.iter_mut().zip(g).enumerate() {
                    *d += gv * sd[j % c];
                }
            }
            if let Some(gs) = slot(grads, nodes, *s) {
                for (j, (gv, xv)) in g.iter().zip(xd).enumerate() {
                    gs[j % c] += gv * xv;
                }
            }
        }
        Op::LayerNorm { x, g: gam, b, xhat, rstd } => {
            let c = nodes[gam.0].value.len();
            let gd = val(*gam);
            if let Some(gx) = slot(grads, nodes, *x) {
                for (r, &rs) in rstd.iter().enumerate() {
                    let go = &g[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..c {
                        let d = go[j] * gd[j];
                        m1 += d;
                        m2 += d * xh[j];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for j in 0..c {
                        gx[r * c + j] += rs * (go[j] * gd[j] - m1 - xh[j] * m2);
                    }
                }
            }
            if let Some(gg) = slot(grads, nodes, *gam) {
                for (j, (gv, xh)) in g.iter().zip(xhat).enumerate() {
                    gg[j % c] += gv * xh;
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for (j, gv) in g.iter().enumerate() {
                    gb[j % c] += gv;
                }
            }
        }
        Op::Unary { x, f } => {
            let xd = val(*x);
            accumulate(
                grads,
                nodes,
                *x,
                g.iter()
                    .zip(xd)
                    .zip(out)
                    .map(|((gv, &xv), &yv)| gv * unary_derivative(*f, xv, yv)),
            );
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.iter().copied());
            accumulate(grads, nodes, *b, g.iter().copied());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.iter().copied());
            accumulate(grads, nodes, *b, g.iter().map(|v| -v));
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a), val(*b));
            accumulate(grads, nodes, *a, g.iter().zip(bd).map(|(x, y)| x * y));
            accumulate(grads, nodes, *b, g.iter().zip(ad).map(|(x, y)| x * y));
        }
        Op::Scale { x, s } => accumulate(grads, nodes, *x, g.iter().map(|v| v * s)),
        Op::Gather { x, index } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for (gv, &src) in g.iter().zip(index) {
                    gx[src] += gv;
                }
            }
        }
        Op::Concat { xs } => {
            let total = nodes[i].value.last_dim();
            let rows = g.len() / total.max(1);
            let mut off = 0;
            for x in xs {
                let c = nodes[x.0].value.last_dim();
                if let Some(gx) = slot(grads, nodes, *x) {
                    for r in 0..rows {
                        for j in 0..c {
                            gx[r * c + j] += g[r * total + off + j];
                        }
                    }
                }
                off += c;
            }
        }
        Op::Slice { x, start } => {
            let c = nodes[x.0].value.last_dim();
            let len = nodes[i].value.last_dim();
            if let Some(gx) = slot(grads, nodes, *x) {
                for (r, row) in g.chunks(len).enumerate() {
                    for (j, gv) in row.iter().enumerate() {
                        gx[r * c + start + j] += gv;
                    }
                }
            }
        }
        Op::Rows { x, start } => {
            let row: usize = nodes[x.0].value.shape()[1..].iter().product();
            if let Some(gx) = slot(grads, nodes, *x) {
                for (d, gv) in gx[start * row..].iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
        Op::ConcatRows { xs } => {
            let mut off = 0;
            for x in xs {
                let n = nodes[x.0].value.len();
                accumulate(grads, nodes, *x, g[off..off + n].iter().copied());
                off += n;
            }
        }
        Op::Reshape { x } => accumulate(grads, nodes, *x, g.iter().copied()),
        Op::Scan {
            u,
            delta,
            a,
            b,
            c,
            d,
            states,
            decay,
        } => {
            let us = nodes[u.0].value.shape();
            let dims = geom::scan::ScanDims {
                len: us[0],
                dim: us[1],
                nstate: nodes[a.0].value.shape()[1],
            };
            let gr = geom::scan::backward(
                &dims,
                val(*u),
                val(*delta),
                val(*a),
                val(*b),
                val(*c),
                val(*d),
                states,
                decay,
                g,
            );
            accumulate(grads, nodes, *u, gr.u);
            accumulate(grads, nodes, *delta, gr.delta);
            accumulate(grads, nodes, *a, gr.a);
            accumulate(grads, nodes, *b, gr.b);
            accumulate(grads, nodes, *c, gr.c);
            accumulate(grads, nodes, *d, gr.d);
        }
        Op::Warp { x, flow } => {
            let xs = nodes[x.0].value.shape();
            let (gx, gf) = entropy::warp::backward(xs, val(*x), val(*flow), g);
            accumulate(grads, nodes, *x, gx);
            accumulate(grads, nodes, *flow, gf);
        }
        Op::MatMul { a, b, ta, tb } => {
            let sa = nodes[a.0].value.shape();
            let sb = nodes[b.0].value.shape();
            let (batch, m, k, n) = matmul_dims(sa, sb, *ta, *tb)?;
            let (ar, ac) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let (br, bc) = (sb[sb.len() - 2], sb[sb.len() - 1]);
            let (ad, bd) = (val(*a), val(*b));
            if let Some(ga) = slot(grads, nodes, *a) {
                for bt in 0..batch {
                    for ii in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[(bt * m + ii) * n + j] * bd[bt * br * bc + at(br, bc, *tb, p, j)];
                            }
                            ga[bt * ar * ac + at(ar, ac, *ta, ii, p)] += s;
                        }
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for bt in 0..batch {
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for ii in 0..m {
                                s += g[(bt * m + ii) * n + j] * ad[bt * ar * ac + at(ar, ac, *ta, ii, p)];
                            }
                            gb[bt * br * bc + at(br, bc, *tb, p, j)] += s;
                        }
                    }
                }
            }
        }
        Op::Softmax { x } => {
            let c = nodes[i].value.last_dim();
            if let Some(gx) = slot(grads, nodes, *x) {
                for (r, (go, yo)) in g.chunks(c).zip(out.chunks(c)).enumerate() {
                    let dot: f64 = go.iter().zip(yo).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] += yo[j] * (go[j] - dot);
                    }
                }
            }
        }
        Op::Sum { x } => {
            let gv = g[0];
            accumulate(grads, nodes, *x, std::iter::repeat(gv));
        }
        Op::LowerBound { x, bound } => {
            let xd = val(*x);
            accumulate(
                grads,
                nodes,
                *x,
                g.iter()
                    .zip(xd)
                    .map(|(&gv, &xv)| if xv >= *bound || gv < 0.0 { gv } else { 0.0 }),
            );
        }
        Op::Straight { x } => accumulate(grads, nodes, *x, g.iter().copied()),
        Op::Clamp { x, lo, hi } => {
            let xd = val(*x);
            accumulate(
                grads,
                nodes,
                *x,
                g.iter()
                    .zip(xd)
                    .map(|(&gv, &xv)| if xv >= *lo && xv <= *hi { gv } else { 0.0 }),
            );
        }
        Op::Likelihood { y, mu, sigma, floor } => {
            let (yd, md, sd) = (val(*y), val(*mu), val(*sigma));
            let n = yd.len();
            let mut gy = vec![0.0; n];
            let mut gs = vec![0.0; n];
            for j in 0..n {
                let p = gaussian::bin_probability(yd[j], md[j], sd[j]);
                if p < *floor && g[j] >= 0.0 {
                    continue;
                }
                let (dy, ds) = gaussian::bin_probability_grad(yd[j], md[j], sd[j]);
                gy[j] = g[j] * dy;
                gs[j] = g[j] * ds;
            }
            accumulate(grads, nodes, *mu, gy.iter().map(|v| -v));
            accumulate(grads, nodes, *y, gy);
            accumulate(grads, nodes, *sigma, gs);
        }
        Op::KernelMap { k, map } => {
            let c = nodes[k.0].value.shape()[2];
            if let Some(gk) = slot(grads, nodes, *k) {
                for p in 0..9 {
                    for q in 0..9 {
                        let m = map[p][q];
                        if m == 0.0 {
                            continue;
                        }
                        for ch in 0..c {
                            gk[q * c + ch] += m * g[p * c + ch];
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
