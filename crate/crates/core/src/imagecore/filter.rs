use super::{BinaryImage, Image};
use crate::error::{Error, Result};

/// Normalized 1-D Gaussian taps for an odd `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::invalid(format!("kernel size must be odd and >= 3, got {size}")));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid(format!("sigma must be finite and positive, got {sigma}")));
    }
    let r = (size / 2) as isize;
    let mut taps: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    Ok(taps)
}

/// Separable Gaussian blur with edge replication. Accumulates in f64 in a
/// fixed tap order, so results are bit-reproducible.
pub fn gaussian_blur(img: &Image, kernel_size: usize, sigma: f64) -> Result<Image> {
    let taps = gaussian_kernel(kernel_size, sigma)?;
    let (w, h) = (img.width(), img.height());
    if w < kernel_size || h < kernel_size {
        return Err(Error::invalid(format!("image {w}x{h} smaller than kernel {kernel_size}")));
    }
    let r = (kernel_size / 2) as isize;

    let mut horiz = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * img.get_clamped(x as isize + k as isize - r, y as isize) as f64;
            }
            horiz[y * w + x] = acc;
        }
    }

    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += t * horiz[yy * w + x];
            }
            out.set(x, y, acc as f32);
        }
    }
    Ok(out)
}

/// Local-mean adaptive threshold for dark lines on a light background:
/// a pixel is foreground iff it is below the edge-replicated
/// `window`×`window` mean minus `offset_c`.
pub fn adaptive_threshold(img: &Image, window: usize, offset_c: f64) -> Result<BinaryImage> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!("window must be odd and >= 3, got {window}")));
    }
    let (w, h) = (img.width(), img.height());
    if window > w.min(h) {
        return Err(Error::invalid(format!("window {window} exceeds image size {w}x{h}")));
    }
    if !offset_c.is_finite() {
        return Err(Error::invalid("offset_c must be finite"));
    }
    let r = (window / 2) as isize;

    // Direct (non-integral-image) sums keep each decision a function of the
    // window pixels only.
    let mut rows = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dx in -r..=r {
                acc += img.get_clamped(x as isize + dx, y as isize) as f64;
            }
            rows[y * w + x] = acc;
        }
    }
    let n = (window * window) as f64;
    let mut out = BinaryImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                acc += rows[yy * w + x];
            }
            let mean = acc / n;
            if (img.get(x, y) as f64) < mean - offset_c {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}
