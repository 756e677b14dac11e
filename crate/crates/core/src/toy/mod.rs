//! Small end-to-end super-resolution setup: resampling, synthetic data, a
//! tiny upsampler, its trainer and checkpoints.

pub mod checkpoint;
pub mod metrics;
pub mod model;
pub mod resize;
pub mod synth;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use metrics::{nearest_upscale, psnr};
pub use model::{conv2d, pixel_shuffle, toy_forward, upscale, ToyModelParams, ToyModelVars};
pub use resize::{bicubic_resize, resize_to};
pub use synth::{gaussian_blur, synthetic_dataset, synthetic_image};
pub use train::{
    train, write_trace_csv, Adam, StepHook, TraceRow, TrainConfig, TrainOutput, TrainingSet,
};
