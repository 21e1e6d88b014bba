use serde::{Deserialize, Serialize};

use super::BinaryImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeShape {
    Square,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    pub radius: usize,
    pub shape: SeShape,
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self { radius: 1, shape: SeShape::Square }
    }
}

impl StructuringElement {
    pub fn new(radius: usize, shape: SeShape) -> Result<Self> {
        if radius < 1 {
            return Err(Error::invalid("structuring element radius must be >= 1"));
        }
        Ok(Self { radius, shape })
    }

    /// `(dx, dy)` offsets covered by the element.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if self.shape == SeShape::Square || dx == 0 || dy == 0 {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

fn apply(img: &BinaryImage, se: &StructuringElement, dilation: bool) -> BinaryImage {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let offsets = se.offsets();
    BinaryImage::from_fn(img.width(), img.height(), |x, y| {
        let probe = |&(dx, dy): &(isize, isize)| {
            let (xx, yy) = (x as isize + dx, y as isize + dy);
            if xx < 0 || yy < 0 || xx >= w || yy >= h {
                // Outside: background for dilation, foreground for erosion.
                !dilation
            } else {
                img.get(xx as usize, yy as usize)
            }
        };
        if dilation {
            offsets.iter().any(probe)
        } else {
            offsets.iter().all(probe)
        }
    })
}

pub fn dilate(img: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    apply(img, se, true)
}

pub fn erode(img: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    apply(img, se, false)
}

/// Dilation followed by erosion with the same element.
pub fn morph_close(img: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    erode(&dilate(img, se), se)
}

pub fn morph_open(img: &BinaryImage, se: &StructuringElement) -> BinaryImage {
    dilate(&erode(img, se), se)
}
