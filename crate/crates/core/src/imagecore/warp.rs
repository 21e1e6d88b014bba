use super::{BinaryImage, Image};
use crate::error::Result;
use crate::geometry::Homography;

/// Inverse-mapping perspective warp: `out(p) = img(H⁻¹ p)` with bilinear
/// interpolation. Content at `x` in `img` lands at `H x` in the output.
pub fn warp_perspective(img: &Image, h: &Homography, fill: f32) -> Result<Image> {
    let inv = h.inverse()?;
    let (w, ht) = (img.width(), img.height());
    let (maxx, maxy) = ((w - 1) as f64, (ht - 1) as f64);
    Ok(Image::from_fn(w, ht, |x, y| {
        let (sx, sy) = match inv.apply(x as f64, y as f64) {
            Some(p) => p,
            None => return fill,
        };
        // Tolerate round-off right at the border.
        const EPS: f64 = 1e-9;
        if !(sx >= -EPS && sy >= -EPS && sx <= maxx + EPS && sy <= maxy + EPS) {
            return fill;
        }
        let sx = sx.clamp(0.0, maxx);
        let sy = sy.clamp(0.0, maxy);
        let x0 = sx.floor() as usize;
        let y0 = sy.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(ht - 1);
        let fx = sx - x0 as f64;
        let fy = sy - y0 as f64;
        let v00 = img.get(x0, y0) as f64;
        let v10 = img.get(x1, y0) as f64;
        let v01 = img.get(x0, y1) as f64;
        let v11 = img.get(x1, y1) as f64;
        let top = v00 * (1.0 - fx) + v10 * fx;
        let bottom = v01 * (1.0 - fx) + v11 * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    }))
}

/// Nearest-neighbor warp of a mask; samples outside the source are 0.
pub fn warp_binary_nearest(img: &BinaryImage, h: &Homography) -> Result<BinaryImage> {
    let inv = h.inverse()?;
    let (w, ht) = (img.width() as f64, img.height() as f64);
    Ok(BinaryImage::from_fn(img.width(), img.height(), |x, y| match inv.apply(x as f64, y as f64) {
        Some((sx, sy)) => {
            let (rx, ry) = (sx.round(), sy.round());
            rx >= 0.0 && ry >= 0.0 && rx < w && ry < ht && img.get(rx as usize, ry as usize)
        }
        None => false,
    }))
}
