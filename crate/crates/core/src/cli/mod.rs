//! Video I/O, metrics, and the command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;
pub mod metrics;
mod selftest;
pub mod video;

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_decode, cmd_encode, cmd_metrics, cmd_train, decode_bytes, encode_video, par_map, DecodeOutcome, EncodeOptions,
    EncodeOutcome, ModelSource, TrainOptions, DEFAULT_GOP,
};
pub use metrics::RateDistortionReport;
pub use selftest::{cmd_selftest, direct_difference, run_selftest, Check, RewriteFn, SelftestOptions, SelftestReport};
pub use video::Video;

use crate::codec::Preset;
use crate::error::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "gtvc", version, about = "Learned video codec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "tiny")]
    pub preset: Preset,
    /// Weights; without one the seeded initialization is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    fn source(&self) -> ModelSource {
        ModelSource {
            preset: self.preset,
            seed: self.seed,
            checkpoint: self.checkpoint.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress a .y4m (4:2:0) or raw RGB24 video.
    Encode {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = DEFAULT_GOP)]
        gop: usize,
        /// 0, 1, 2 select lambda 128, 256, 512.
        #[arg(long, default_value_t = 1)]
        lambda_index: usize,
        /// Decode the stream in-process and check the latents match.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Reconstruct a video from a bitstream.
    Decode {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Train on synthetic clips and write a checkpoint.
    Train {
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        stage: u8,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        lambda_index: usize,
        #[arg(long, default_value_t = 24)]
        clips: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Training log, one record per line.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// PSNR and MS-SSIM of a reconstruction; bpp when the bitstream is given.
    Metrics {
        reference: PathBuf,
        reconstruction: PathBuf,
        #[arg(long)]
        bitstream: Option<PathBuf>,
    },
    /// Run the invariant suite.
    Selftest,
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Execute a parsed command.
pub fn execute(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Encode {
            input,
            output,
            model,
            gop,
            lambda_index,
            verify,
            threads,
            report,
        } => {
            let opts = EncodeOptions {
                model: model.source(),
                gop,
                lambda_index,
                verify,
                threads,
            };
            let out = cmd_encode(&input, &output, &opts)?;
            println!("gop segments {}", out.segments);
            print!("{}", out.report);
            if let Some(path) = report {
                std::fs::write(path, format!("gop segments {}\n{}", out.segments, out.report))?;
            }
            Ok(EXIT_OK)
        }
        Command::Decode {
            input,
            output,
            model,
            threads,
        } => {
            let out = cmd_decode(&input, &output, &model.source(), threads)?;
            println!(
                "decoded {} frames {}x{} in {:.3} s",
                out.video.frame_count(),
                out.video.width(),
                out.video.height(),
                out.decode_secs
            );
            Ok(EXIT_OK)
        }
        Command::Train {
            output,
            model,
            stage,
            steps,
            lambda_index,
            clips,
            size,
            log,
        } => {
            let opts = TrainOptions {
                model: model.source(),
                stage,
                steps,
                lambda_index,
                clips,
                size,
                seed: model.seed,
                ..TrainOptions::default()
            };
            let mut log_file = log.map(File::create).transpose()?;
            let mut io_err = None;
            cmd_train(&opts, &output, |r| {
                println!("{r}");
                if let Some(f) = log_file.as_mut() {
                    if let Err(e) = writeln!(f, "{r}") {
                        io_err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            Ok(EXIT_OK)
        }
        Command::Metrics {
            reference,
            reconstruction,
            bitstream,
        } => {
            let r = cmd_metrics(&reference, &reconstruction, bitstream.as_deref())?;
            print!("{r}");
            Ok(EXIT_OK)
        }
        Command::Selftest => {
            let r = cmd_selftest();
            println!("{r}");
            Ok(if r.passed() { EXIT_OK } else { EXIT_DATA })
        }
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
