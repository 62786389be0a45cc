//! A short stage-1 run on synthetic translating clips.
//!
//! `cargo run --release --example train_tiny -- 200` sets the step count.

use gtvc::codec::{CodecConfig, Model};
use gtvc::train::{evaluate, make_synthetic_dataset, random_specs, smoothed, train_stage1, TrainConfig, LAMBDA_GRID};

fn main() -> gtvc::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let data = make_synthetic_dataset(&random_specs(8, 8, 64, 2, 0), 1);
    let held = make_synthetic_dataset(&random_specs(1, 8, 64, 2, 50), 51).remove(0);
    let mut model = Model::new(CodecConfig::tiny(), 0)?;
    println!("{} parameters", model.store.num_trainable_scalars());

    let before = evaluate(&model, &held, 8)?;
    let mut rds = Vec::new();
    train_stage1(&mut model, &data, LAMBDA_GRID[1], &TrainConfig::stage1(steps, 0), |r| {
        rds.push(r.rd);
        if r.step % 10 == 0 {
            println!("{r}");
        }
    })?;
    let after = evaluate(&model, &held, 8)?;
    if let (Some(first), Some(last)) = (rds.first(), smoothed(&rds, 10).last()) {
        println!("rd {first:.3} -> smoothed {last:.3}");
    }
    println!("held-out bpp {:.4} -> {:.4}, psnr {:.2} -> {:.2} dB", before.bpp, after.bpp, before.psnr, after.psnr);
    Ok(())
}
