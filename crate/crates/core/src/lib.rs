//! palmforge: synthetic palmprint identities from a two-stage pixel-space
//! diffusion pipeline.
//!
//! The crate is organized bottom-up:
//!
//! 1. [`imagecore`] - grayscale raster container, blur, adaptive threshold,
//!    morphology, perspective warps and PNG/PGM I/O.
//! 2. [`crease`] - cubic Bézier crease identities, rasterization and
//!    skin-like texture compositing (the "real-analog" corpus).
//! 3. [`lineextract`] - blur → adaptive threshold → closing line maps that
//!    carry identity into the conditional stage.
//! 4. [`geometry`] - FAST/steered-BRIEF keypoints, Hamming matching, RANSAC
//!    homographies and the homography bank used for augmentation.
//! 5. [`nn`] - a small tape-based autodiff engine, the U-Net denoiser with a
//!    zero-initialized control branch, Adam and cosine learning rates.
//! 6. [`diffusion`] - noise schedules, forward noising, the training loop and
//!    the ancestral sampler.
//! 7. [`pipeline`] - identity synthesis, identity-preserving rendering and
//!    corpus manifests.
//! 8. [`eval`] - matcher training, genuine/imposter scores, TAR@FAR, PCA
//!    projection and the real/synthetic utility experiment.

pub mod crease;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imagecore;
pub mod lineextract;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
pub use imagecore::{BinaryImage, Image};

/// Canonical working resolution (square) of every generated raster.
pub const CANONICAL_RES: usize = 64;
