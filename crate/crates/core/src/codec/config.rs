use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of latent channel slices coded in sequence.
pub const NUM_SLICES: usize = 5;
/// Stride-2 stages in the analysis transform.
pub const NUM_STAGES: usize = 4;
/// Total spatial downsampling of the analysis transform.
pub const DOWNSAMPLE: usize = 1 << NUM_STAGES;
/// Additional downsampling of the hyper-latent relative to the latent.
pub const HYPER_DOWNSAMPLE: usize = 4;
/// Frame sizes must be a multiple of this for the full pipeline.
pub const PAD_MULTIPLE: usize = DOWNSAMPLE * HYPER_DOWNSAMPLE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Tiny,
    Full,
}

impl Preset {
    pub fn flag_bit(self) -> u8 {
        match self {
            Preset::Tiny => 0,
            Preset::Full => 1,
        }
    }

    pub fn from_flag_bit(bit: u8) -> Self {
        if bit & 1 == 1 {
            Preset::Full
        } else {
            Preset::Tiny
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Tiny => "tiny",
            Preset::Full => "full",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "full" => Ok(Preset::Full),
            _ => Err(Error::InvalidArgument(format!("unknown preset {s}"))),
        }
    }
}

/// Architecture hyperparameters of the whole codec.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodecConfig {
    pub preset: Preset,
    /// Channel width of each analysis stage, finest first.
    pub stage_channels: [usize; NUM_STAGES],
    /// Latent channels `M`.
    pub latent_channels: usize,
    pub evss_per_stage: usize,
    pub state_dim: usize,
    /// LRFFN expansion factor.
    pub ffn_expansion: usize,
    pub hyper_channels: usize,
    pub hyper_latent_channels: usize,
    /// Hidden width of each slice-network head.
    pub slice_hidden: usize,
    pub motion_channels: usize,
    pub condition_channels: usize,
    /// Side of the square attention windows in the condition network.
    pub attention_window: usize,
}

impl CodecConfig {
    pub fn tiny() -> Self {
        Self {
            preset: Preset::Tiny,
            stage_channels: [16, 32, 32, 32],
            latent_channels: 40,
            evss_per_stage: 1,
            state_dim: 16,
            ffn_expansion: 2,
            hyper_channels: 32,
            hyper_latent_channels: 16,
            slice_hidden: 32,
            motion_channels: 32,
            condition_channels: 32,
            attention_window: 4,
        }
    }

    pub fn full() -> Self {
        Self {
            preset: Preset::Full,
            stage_channels: [128; NUM_STAGES],
            latent_channels: 320,
            evss_per_stage: 1,
            state_dim: 16,
            ffn_expansion: 2,
            hyper_channels: 192,
            hyper_latent_channels: 128,
            slice_hidden: 128,
            motion_channels: 128,
            condition_channels: 128,
            attention_window: 4,
        }
    }

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Tiny => Self::tiny(),
            Preset::Full => Self::full(),
        }
    }

    /// Channels of one latent slice.
    pub fn slice_channels(&self) -> usize {
        self.latent_channels / NUM_SLICES
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.latent_channels % NUM_SLICES != 0 {
            return Err(Error::InvalidArgument(format!(
                "latent channels {} not divisible by {NUM_SLICES}",
                self.latent_channels
            )));
        }
        if self.stage_channels.iter().any(|&c| c == 0 || c % 2 != 0) {
            return Err(Error::InvalidArgument(format!(
                "stage widths {:?} must be even and nonzero",
                self.stage_channels
            )));
        }
        if self.evss_per_stage == 0 || self.state_dim == 0 || self.ffn_expansion == 0 || self.attention_window == 0 {
            return Err(Error::InvalidArgument("zero-sized codec hyperparameter".into()));
        }
        Ok(())
    }
}
