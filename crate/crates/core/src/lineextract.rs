//! Crease line maps: Gaussian blur, local-mean adaptive threshold, then a
//! morphological closing. The result strips texture and gain so it can act
//! as an identity-carrying control signal.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imagecore::{adaptive_threshold, gaussian_blur, morph_close, BinaryImage, Image, StructuringElement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineExtractConfig {
    pub kernel_size: usize,
    pub sigma: f64,
    pub window: usize,
    pub offset_c: f64,
    pub se: StructuringElement,
}

impl Default for LineExtractConfig {
    fn default() -> Self {
        Self { kernel_size: 5, sigma: 1.1, window: 15, offset_c: 0.05, se: StructuringElement::default() }
    }
}

/// Thresholded map before the closing step.
pub fn extract_lines_pre_closing(img: &Image, cfg: &LineExtractConfig) -> Result<BinaryImage> {
    img.require_min_dims(32)?;
    let blurred = gaussian_blur(img, cfg.kernel_size, cfg.sigma)?;
    adaptive_threshold(&blurred, cfg.window, cfg.offset_c)
}

pub fn extract_lines(img: &Image, cfg: &LineExtractConfig) -> Result<BinaryImage> {
    Ok(morph_close(&extract_lines_pre_closing(img, cfg)?, &cfg.se))
}
