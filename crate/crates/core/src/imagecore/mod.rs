//! Single-channel rasters and the low-level operations the rest of the
//! crate is built on.
//!
//! Border policy: blur and adaptive threshold replicate edge pixels, warps
//! fill out-of-bounds samples with a caller-supplied value, dilation sees
//! the outside as background and erosion sees it as foreground.

mod filter;
mod image;
pub mod io;
mod morph;
mod warp;

pub use filter::{adaptive_threshold, gaussian_blur, gaussian_kernel};
pub use image::{BinaryImage, Image};
pub use morph::{dilate, erode, morph_close, morph_open, SeShape, StructuringElement};
pub use warp::{warp_binary_nearest, warp_perspective};
