//! Synthetic clips: a random pattern translated at constant integer
//! velocity with wraparound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternKind {
    Gradient,
    Checkerboard,
    NoiseTexture,
}

impl PatternKind {
    pub const ALL: [PatternKind; 3] = [PatternKind::Gradient, PatternKind::Checkerboard, PatternKind::NoiseTexture];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipSpec {
    pub pattern: PatternKind,
    /// Pixels per frame, `(x, y)`.
    pub velocity: (i32, i32),
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// A generated clip with its ground-truth motion.
#[derive(Clone, Debug)]
pub struct Clip {
    pub spec: ClipSpec,
    /// `(T, 3, H, W)` in `[0, 1]`.
    pub frames: Tensor,
}

impl Clip {
    pub fn velocity(&self) -> (i32, i32) {
        self.spec.velocity
    }
}

fn pattern(kind: PatternKind, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut img = vec![0.0; 3 * h * w];
    match kind {
        PatternKind::Gradient => {
            for c in 0..3 {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                let off: f64 = rng.gen_range(0.2..0.8);
                for y in 0..h {
                    for x in 0..w {
                        let v = off + 0.5 * (a * (x as f64 / w as f64 - 0.5) + b * (y as f64 / h as f64 - 0.5));
                        img[(c * h + y) * w + x] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
        PatternKind::Checkerboard => {
            let cell = rng.gen_range(4..=16usize);
            let colors: [[f64; 3]; 2] = [
                std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
                std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
            ];
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        img[(c * h + y) * w + x] = colors[(x / cell + y / cell) % 2][c];
                    }
                }
            }
        }
        PatternKind::NoiseTexture => {
            // periodic bilinear value noise on a coarse lattice
            let cell = rng.gen_range(4..=8usize);
            let (gh, gw) = (h.div_ceil(cell).max(1), w.div_ceil(cell).max(1));
            for c in 0..3 {
                let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen_range(0.0..1.0)).collect();
                for y in 0..h {
                    for x in 0..w {
                        let (fy, fx) = (y as f64 / cell as f64, x as f64 / cell as f64);
                        let (y0, x0) = (fy.floor() as usize % gh, fx.floor() as usize % gw);
                        let (y1, x1) = ((y0 + 1) % gh, (x0 + 1) % gw);
                        let (ty, tx) = (fy.fract(), fx.fract());
                        let g = |yy: usize, xx: usize| grid[yy * gw + xx];
                        let top = g(y0, x0) * (1.0 - tx) + g(y0, x1) * tx;
                        let bot = g(y1, x0) * (1.0 - tx) + g(y1, x1) * tx;
                        img[(c * h + y) * w + x] = top * (1.0 - ty) + bot * ty;
                    }
                }
            }
        }
    }
    img
}

/// Generate one clip: frame `t` is frame 0 rolled by `t * velocity`.
pub fn make_clip(spec: ClipSpec, rng: &mut ChaCha8Rng) -> Clip {
    let (h, w) = (spec.height, spec.width);
    let base = pattern(spec.pattern, h, w, rng);
    let mut data = Vec::with_capacity(spec.frames * 3 * h * w);
    for t in 0..spec.frames as i64 {
        let dx = t * i64::from(spec.velocity.0);
        let dy = t * i64::from(spec.velocity.1);
        for c in 0..3 {
            for y in 0..h as i64 {
                let sy = (y - dy).rem_euclid(h as i64) as usize;
                for x in 0..w as i64 {
                    let sx = (x - dx).rem_euclid(w as i64) as usize;
                    data.push(base[(c * h + sy) * w + sx]);
                }
            }
        }
    }
    Clip {
        spec,
        frames: Tensor::new(vec![spec.frames, 3, h, w], data).expect("clip shape"),
    }
}

/// Deterministic clips for `specs`.
pub fn make_synthetic_dataset(specs: &[ClipSpec], seed: u64) -> Vec<Clip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    specs.iter().map(|&s| make_clip(s, &mut rng)).collect()
}

/// `count` specs cycling through the patterns with velocities in
/// `[-max_speed, max_speed]^2`.
pub fn random_specs(count: usize, frames: usize, size: usize, max_speed: i32, seed: u64) -> Vec<ClipSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| ClipSpec {
            pattern: PatternKind::ALL[i % PatternKind::ALL.len()],
            velocity: (rng.gen_range(-max_speed..=max_speed), rng.gen_range(-max_speed..=max_speed)),
            frames,
            height: size,
            width: size,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn still_clip_repeats_frames() {
        for p in PatternKind::ALL {
            let spec = ClipSpec {
                pattern: p,
                velocity: (0, 0),
                frames: 3,
                height: 8,
                width: 12,
            };
            let c = make_synthetic_dataset(&[spec], 1).remove(0);
            let f0 = c.frames.select_rows(0, 1).unwrap();
            for t in 1..3 {
                assert_eq!(c.frames.select_rows(t, 1).unwrap(), f0);
            }
        }
    }

    #[test]
    fn unit_velocity_rolls_frames() {
        let spec = ClipSpec {
            pattern: PatternKind::NoiseTexture,
            velocity: (1, 0),
            frames: 4,
            height: 8,
            width: 8,
        };
        let c = make_synthetic_dataset(&[spec], 2).remove(0);
        let d = c.frames.data();
        for t in 0..4 {
            for ch in 0..3 {
                for y in 0..8 {
                    for x in 0..8 {
                        let sx = (x + 8 - t) % 8;
                        assert_eq!(d[((t * 3 + ch) * 8 + y) * 8 + x], d[(ch * 8 + y) * 8 + sx]);
                    }
                }
            }
        }
    }
}
