//! MRI motion artifact simulation and correction at desk scale.
//!
//! The pipeline: generate (or ingest) clean 2D slices, corrupt them by
//! compositing k-space lines acquired under different rigid poses, train
//! either an unconditional denoising diffusion model on clean slices or a
//! supervised corrector on (corrupted, clean) pairs, and repair corrupted
//! slices by partial re-noising followed by the learned reverse process.
//! Everything is scored with SSIM/NMSE/PSNR.

pub mod baseline;
pub mod dataio;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod motionsim;
pub mod neural;
pub mod numerics;
pub mod preprocess;

pub use error::{Error, Result};
