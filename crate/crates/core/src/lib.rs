//! SUNet: a Swin Transformer UNet for image denoising.
//!
//! The crate provides a small reverse-mode tensor engine, the windowed
//! attention and resizing blocks the architecture is made of, the assembled
//! encoder-decoder model, an AWGN training pipeline with checkpointing, and
//! PSNR/SSIM evaluation. The `sunet` binary exposes `train`, `denoise`,
//! `eval` and `info` commands over the same APIs.

pub mod error;
pub mod model;
pub mod ops;
pub mod rng;
pub mod resample;
pub mod swin;
pub mod tensor;

pub use error::{CheckpointError, Error, Result};
pub use tensor::{grad_check, Element, Gradients, Parameter, Tape, Tensor};
