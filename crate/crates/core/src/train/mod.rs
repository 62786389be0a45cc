//! Synthetic data, losses, optimizer and the training loop.

pub mod data;
pub mod loss;
pub mod optim;
mod trainer;

pub use data::{make_clip, make_synthetic_dataset, random_specs, Clip, ClipSpec, PatternKind};
pub use loss::{
    gram, perceptual_style_loss, perceptual_style_terms, rd_loss, FeatureExtractor, LossWeights, PerceptualVars, RdVars,
    DEFAULT_LAMBDA_PER, DEFAULT_LAMBDA_STY, LAMBDA_GRID,
};
pub use optim::{clip_grad_norm, grad_norm, Adam};
pub use trainer::{
    evaluate, format_log, smoothed, train, train_stage1, train_stage2, train_step, Evaluation, TrainConfig, TrainRecord,
    CLIP_NORM, DEFAULT_LR, STAGE1_GOP, STAGE2_GOP, STAGE2_HALVING,
};
