//! Compress a synthetic clip with the tiny preset, decode it from the bytes
//! alone, and print the rate-distortion report.
//!
//! Pass a checkpoint path to use trained weights instead of the seeded
//! initialization.

use gtvc::cli::{decode_bytes, encode_video, EncodeOptions, ModelSource, Video};
use gtvc::train::{make_synthetic_dataset, random_specs};

fn main() -> gtvc::Result<()> {
    let clip = make_synthetic_dataset(&random_specs(1, 8, 64, 2, 11), 12).remove(0);
    let video = Video::new(clip.frames)?;
    let opts = EncodeOptions {
        gop: 4,
        verify: true,
        model: ModelSource {
            checkpoint: std::env::args().nth(1).map(Into::into),
            ..ModelSource::default()
        },
        ..EncodeOptions::default()
    };
    let (bytes, outcome) = encode_video(&video, &opts)?;
    println!("{} GOP segments, {} bytes", outcome.segments, bytes.len());
    print!("{}", outcome.report);

    let decoded = decode_bytes(&bytes, &opts.model, 1)?;
    println!(
        "decoder output identical to encoder reconstruction: {}",
        decoded.video.frames == outcome.reconstruction
    );
    Ok(())
}
