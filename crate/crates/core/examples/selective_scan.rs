//! Run the sequential and blocked selective-scan kernels on one random
//! sequence and compare them.

use std::time::Instant;

use gtvc::geom::scan::{forward, forward_blocked, ScanDims, DEFAULT_BLOCK};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dims = ScanDims {
        len: 4096,
        dim: 16,
        nstate: 8,
    };
    let mut draw = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
    let u = draw(dims.len * dims.dim, -1.0, 1.0);
    let delta = draw(dims.len * dims.dim, 0.001, 0.2);
    let a = draw(dims.dim * dims.nstate, -4.0, -0.1);
    let b = draw(dims.len * dims.nstate, -1.0, 1.0);
    let c = draw(dims.len * dims.nstate, -1.0, 1.0);
    let d = draw(dims.dim, -1.0, 1.0);

    let t0 = Instant::now();
    let seq = forward(&dims, &u, &delta, &a, &b, &c, &d, false).y;
    let t_seq = t0.elapsed();
    let t0 = Instant::now();
    let blk = forward_blocked(&dims, &u, &delta, &a, &b, &c, &d, DEFAULT_BLOCK);
    let t_blk = t0.elapsed();

    let worst = seq
        .iter()
        .zip(&blk)
        .map(|(p, q)| (p - q).abs() / p.abs().max(1e-12))
        .fold(0.0, f64::max);
    println!("L={} D={} N={}", dims.len, dims.dim, dims.nstate);
    println!("sequential {:?}, blocked({DEFAULT_BLOCK}) {:?}", t_seq, t_blk);
    println!("max relative difference {worst:.3e}");
}
