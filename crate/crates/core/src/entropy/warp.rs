//! Backward bilinear warping with border clamping.
//!
//! `out[n, y, x, :] = bilinear(feature[n], x + flow[n, y, x, 0], y + flow[n, y, x, 1])`.
//! Sample coordinates are clamped to the feature grid, so displacements
//! pointing outside replicate the border.

struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    clamped_x: bool,
    clamped_y: bool,
}

#[inline]
fn tap(px: usize, py: usize, dx: f64, dy: f64, h: usize, w: usize) -> Tap {
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    let rx = px as f64 + dx;
    let ry = py as f64 + dy;
    let sx = rx.clamp(0.0, max_x);
    let sy = ry.clamp(0.0, max_y);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    Tap {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        fx: sx - x0 as f64,
        fy: sy - y0 as f64,
        clamped_x: rx != sx,
        clamped_y: ry != sy,
    }
}

/// `shape` is the feature shape `(N, H, W, C)`; flow is `(N, H, W, 2)`.
pub fn forward(shape: &[usize], x: &[f64], flow: &[f64]) -> Vec<f64> {
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        let frame = &x[b * h * w * c..(b + 1) * h * w * c];
        for py in 0..h {
            for px in 0..w {
                let p = (b * h + py) * w + px;
                let t = tap(px, py, flow[2 * p], flow[2 * p + 1], h, w);
                let w00 = (1.0 - t.fx) * (1.0 - t.fy);
                let w01 = t.fx * (1.0 - t.fy);
                let w10 = (1.0 - t.fx) * t.fy;
                let w11 = t.fx * t.fy;
                let (i00, i01) = ((t.y0 * w + t.x0) * c, (t.y0 * w + t.x1) * c);
                let (i10, i11) = ((t.y1 * w + t.x0) * c, (t.y1 * w + t.x1) * c);
                let dst = &mut out[p * c..(p + 1) * c];
                for ch in 0..c {
                    dst[ch] = w00 * frame[i00 + ch]
                        + w01 * frame[i01 + ch]
                        + w10 * frame[i10 + ch]
                        + w11 * frame[i11 + ch];
                }
            }
        }
    }
    out
}

/// Returns `(d feature, d flow)`.
pub fn backward(shape: &[usize], x: &[f64], flow: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let mut gx = vec![0.0; x.len()];
    let mut gf = vec![0.0; flow.len()];
    for b in 0..n {
        let off = b * h * w * c;
        for py in 0..h {
            for px in 0..w {
                let p = (b * h + py) * w + px;
                let t = tap(px, py, flow[2 * p], flow[2 * p + 1], h, w);
                let w00 = (1.0 - t.fx) * (1.0 - t.fy);
                let w01 = t.fx * (1.0 - t.fy);
                let w10 = (1.0 - t.fx) * t.fy;
                let w11 = t.fx * t.fy;
                let i00 = off + (t.y0 * w + t.x0) * c;
                let i01 = off + (t.y0 * w + t.x1) * c;
                let i10 = off + (t.y1 * w + t.x0) * c;
                let i11 = off + (t.y1 * w + t.x1) * c;
                let go = &g[p * c..(p + 1) * c];
                let (mut gdx, mut gdy) = (0.0, 0.0);
                for ch in 0..c {
                    let gv = go[ch];
                    gx[i00 + ch] += w00 * gv;
                    gx[i01 + ch] += w01 * gv;
                    gx[i10 + ch] += w10 * gv;
                    gx[i11 + ch] += w11 * gv;
                    let (v00, v01, v10, v11) = (x[i00 + ch], x[i01 + ch], x[i10 + ch], x[i11 + ch]);
                    gdx += gv * ((1.0 - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
                    gdy += gv * ((1.0 - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
                }
                if !t.clamped_x {
                    gf[2 * p] = gdx;
                }
                if !t.clamped_y {
                    gf[2 * p + 1] = gdy;
                }
            }
        }
    }
    (gx, gf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> Vec<f64> {
        (0..h * w * c).map(|i| (i as f64 * 0.37).sin()).collect()
    }

    #[test]
    fn zero_flow_is_bit_exact_identity() {
        let x = ramp(5, 6, 3);
        let out = forward(&[1, 5, 6, 3], &x, &vec![0.0; 60]);
        assert_eq!(out, x);
    }

    #[test]
    fn integer_flow_shifts_interior() {
        let (h, w, c) = (5, 6, 2);
        let x = ramp(h, w, c);
        let mut flow = vec![0.0; h * w * 2];
        for p in 0..h * w {
            flow[2 * p] = 1.0;
        }
        let out = forward(&[1, h, w, c], &x, &flow);
        for y in 0..h {
            for xx in 0..w - 1 {
                for ch in 0..c {
                    assert_eq!(out[(y * w + xx) * c + ch], x[(y * w + xx + 1) * c + ch]);
                }
            }
        }
    }

    #[test]
    fn constant_feature_ignores_flow() {
        let x = vec![0.75; 4 * 4 * 2];
        let flow: Vec<f64> = (0..32).map(|i| (i as f64 * 1.3).sin() * 3.0).collect();
        let out = forward(&[1, 4, 4, 2], &x, &flow);
        assert!(out.iter().all(|v| (v - 0.75).abs() < 1e-15));
    }
}
