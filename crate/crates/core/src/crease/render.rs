use super::{flatten, IdentitySpec, Point};
use crate::error::{Error, Result};
use crate::imagecore::{BinaryImage, Image};

/// Rasterizer output with the geometry needed by oracles.
#[derive(Debug, Clone)]
pub struct StrokeRaster {
    pub image: Image,
    /// Pixels whose center lies within half a stroke width of some crease.
    pub support: BinaryImage,
    /// Distance (pixels) from each pixel center to the nearest stroke edge;
    /// zero inside the support.
    pub edge_distance: Vec<f32>,
}

impl StrokeRaster {
    /// Pixels farther than `margin` pixels from every stroke edge.
    pub fn far_background(&self, margin: f32) -> BinaryImage {
        let w = self.image.width();
        BinaryImage::from_fn(w, self.image.height(), |x, y| self.edge_distance[y * w + x] > margin)
    }
}

fn to_pixels(p: Point, w: usize, h: usize) -> Point {
    [p[0] * w as f64 - 0.5, p[1] * h as f64 - 0.5]
}

fn seg_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ((a[0] + t * dx - p[0]).powi(2) + (a[1] + t * dy - p[1]).powi(2)).sqrt()
}

/// Renders creases as dark strokes on a white background together with the
/// stroke support mask. Coverage falls off linearly over one pixel outside
/// half the stroke width.
pub fn render_strokes(spec: &IdentitySpec, width: usize, height: usize) -> Result<StrokeRaster> {
    if width < 32 || height < 32 {
        return Err(Error::invalid(format!("render size {width}x{height} below 32x32")));
    }
    let mut image = Image::filled(width, height, 1.0);
    let mut edge = vec![f32::INFINITY; width * height];
    for curve in &spec.curves {
        let cp = curve.control_points.map(|p| to_pixels(p, width, height));
        let poly = flatten(&cp, 0.05);
        let half = curve.stroke_width / 2.0;
        let reach = half + 1.0;
        for seg in poly.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x0 = (a[0].min(b[0]) - reach).floor().max(0.0) as usize;
            let y0 = (a[1].min(b[1]) - reach).floor().max(0.0) as usize;
            let x1 = ((a[0].max(b[0]) + reach).ceil() as isize).min(width as isize - 1);
            let y1 = ((a[1].max(b[1]) + reach).ceil() as isize).min(height as isize - 1);
            if x1 < 0 || y1 < 0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let d = seg_distance([x as f64, y as f64], a, b);
                    let idx = y * width + x;
                    let e = (d - half).max(0.0) as f32;
                    if e < edge[idx] {
                        edge[idx] = e;
                    }
                    let coverage = (1.0 - (d - half)).clamp(0.0, 1.0);
                    let v = (1.0 - curve.intensity * coverage) as f32;
                    if v < image.pixels()[idx] {
                        image.pixels_mut()[idx] = v;
                    }
                }
            }
        }
    }
    // Pixels never visited are at least `reach` from every stroke; a generous
    // finite stand-in keeps the field finite.
    for e in &mut edge {
        if !e.is_finite() {
            *e = (width + height) as f32;
        }
    }
    let support = BinaryImage::from_fn(width, height, |x, y| edge[y * width + x] == 0.0);
    Ok(StrokeRaster { image, support, edge_distance: edge })
}

pub fn render_creases(spec: &IdentitySpec, width: usize, height: usize) -> Result<Image> {
    Ok(render_strokes(spec, width, height)?.image)
}
