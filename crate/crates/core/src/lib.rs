//! Mixture-of-Chapters (MoC): a decoder-only transformer augmented with a
//! learned latent-token memory bank that is read through cross-attention.
//! The bank is partitioned into fixed-size chapters and a sequence-level
//! router picks the top-k chapters each sequence may attend to.
//!
//! Layout:
//! - [`numerics`]: tensors, kernels with handwritten backward passes, the tape,
//!   and the finite-difference gradient checker.
//! - [`model`]: configuration, parameters, the backbone and the memory layer.
//! - [`flops`]: exact integer analytic FLOPs accounting.
//! - [`training`]: AdamW, schedules, clipping, checkpoints and the trainer.
//! - [`retention`]: the synthetic two-phase forgetting harness.

pub mod error;
pub mod flops;
pub mod model;
pub mod numerics;
pub mod retention;
pub mod training;

pub use error::{MocError, Result};
