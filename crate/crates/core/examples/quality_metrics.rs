//! PSNR and MS-SSIM of a frame under increasing noise.

use gtvc::cli::metrics::{ms_ssim_frame, psnr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gtvc::Result<()> {
    let (h, w) = (64, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frame: Vec<f64> = (0..3 * h * w)
        .map(|i| {
            let (y, x) = ((i / w) % h, i % w);
            0.5 + 0.25 * ((x as f64 / 6.0).sin() + (y as f64 / 9.0).cos())
        })
        .collect();
    for amp in [0.0, 0.01, 0.05, 0.1, 0.2] {
        let noisy: Vec<f64> = frame.iter().map(|v| (v + rng.gen_range(-amp..=amp)).clamp(0.0, 1.0)).collect();
        println!(
            "noise +-{amp:<4} psnr {:6.2} dB  ms-ssim {:.5}",
            psnr(&frame, &noisy),
            ms_ssim_frame(&frame, &noisy, h, w)?
        );
    }
    Ok(())
}
