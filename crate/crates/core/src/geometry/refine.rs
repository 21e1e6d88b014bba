use nalgebra::{SMatrix, SVector};

use super::Homography;
use crate::error::{Error, Result};
use crate::imagecore::{gaussian_blur, Image};

type Mat8 = SMatrix<f64, 8, 8>;
type Vec8 = SVector<f64, 8>;

/// Photometric refinement of `h0` (mapping `a` onto `b`) by Levenberg-Marquardt
/// on the sum of squared intensity differences between `a(x)` and `b(h x)`.
///
/// Returns the refined transform and its RMS residual. If no step improves on
/// `h0` the input is returned unchanged.
pub fn refine_homography(a: &Image, b: &Image, h0: &Homography, max_iters: usize) -> Result<(Homography, f64)> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid("refinement needs equally sized images"));
    }
    let mut h = *h0;
    let mut rms = f64::INFINITY;
    for sigma in [3.0, 1.5, 0.75] {
        let size = (2.0 * (2.5 * sigma as f64).ceil() + 1.0) as usize;
        let ab = gaussian_blur(a, size, sigma)?;
        let bb = gaussian_blur(b, size, sigma)?;
        let margin = (size / 2 + 1).min(a.width().min(a.height()) / 4);
        let norm = Normalizer::new(a.width(), a.height(), margin);
        (h, rms) = refine_level(&ab, &bb, &norm, &h, max_iters);
    }
    Ok((h, rms))
}

fn refine_level(a: &Image, b: &Image, norm: &Normalizer, h0: &Homography, max_iters: usize) -> (Homography, f64) {
    let (gx, gy) = gradients(b);
    let mut p = to_params(&norm.to_normalized(h0));
    let Some((mut current, _)) = cost(a, b, norm, &p) else { return (*h0, f64::INFINITY) };
    let start = current;
    let mut lambda = 1e-3;
    for _ in 0..max_iters {
        let Some((jtj, jtr)) = normal_equations(a, b, &gx, &gy, norm, &p) else { break };
        let mut improved = false;
        while lambda < 1e8 {
            let mut damped = jtj;
            for i in 0..8 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else { lambda *= 10.0; continue };
            let cand = p + step;
            match cost(a, b, norm, &cand) {
                Some((c, _)) if c < current => {
                    p = cand;
                    current = c;
                    lambda = (lambda * 0.1).max(1e-9);
                    improved = step.norm() >= 1e-10;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    finish(norm, &p, current, start, h0)
}

fn finish(norm: &Normalizer, p: &Vec8, cost: f64, start: f64, h0: &Homography) -> (Homography, f64) {
    if cost >= start {
        return (*h0, start.sqrt());
    }
    match Homography::new(norm.to_pixels(&from_params(p))) {
        Ok(h) => (h, cost.sqrt()),
        Err(_) => (*h0, start.sqrt()),
    }
}

struct Normalizer {
    cx: f64,
    cy: f64,
    s: f64,
    /// Pixels excluded at the borders of both images, where blurring mixes
    /// in values from outside the shared field of view.
    margin: f64,
}

impl Normalizer {
    fn new(w: usize, h: usize, margin: usize) -> Self {
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        Self { cx, cy, s: cx.max(cy).max(1.0), margin: margin.max(1) as f64 }
    }

    fn t(&self) -> [[f64; 3]; 3] {
        [[1.0 / self.s, 0.0, -self.cx / self.s], [0.0, 1.0 / self.s, -self.cy / self.s], [0.0, 0.0, 1.0]]
    }

    fn t_inv(&self) -> [[f64; 3]; 3] {
        [[self.s, 0.0, self.cx], [0.0, self.s, self.cy], [0.0, 0.0, 1.0]]
    }

    fn to_normalized(&self, h: &Homography) -> [[f64; 3]; 3] {
        mul(&mul(&self.t(), h.matrix()), &self.t_inv())
    }

    fn to_pixels(&self, m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        mul(&mul(&self.t_inv(), m), &self.t())
    }
}

fn mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn to_params(m: &[[f64; 3]; 3]) -> Vec8 {
    let s = m[2][2];
    Vec8::from_iterator([m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1]].map(|v| v / s))
}

fn from_params(p: &Vec8) -> [[f64; 3]; 3] {
    [[p[0], p[1], p[2]], [p[3], p[4], p[5]], [p[6], p[7], 1.0]]
}

fn gradients(img: &Image) -> (Image, Image) {
    let (w, h) = (img.width(), img.height());
    let gx = Image::from_fn(w, h, |x, y| {
        let l = img.get(x.saturating_sub(1), y);
        let r = img.get((x + 1).min(w - 1), y);
        let span = ((x + 1).min(w - 1) - x.saturating_sub(1)) as f32;
        (r - l) / span
    });
    let gy = Image::from_fn(w, h, |x, y| {
        let u = img.get(x, y.saturating_sub(1));
        let d = img.get(x, (y + 1).min(h - 1));
        let span = ((y + 1).min(h - 1) - y.saturating_sub(1)) as f32;
        (d - u) / span
    });
    (gx, gy)
}

fn bilinear(img: &Image, x: f64, y: f64) -> f64 {
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v = |xx: usize, yy: usize| img.get(xx, yy) as f64;
    let top = v(x0, y0) * (1.0 - fx) + v(x0 + 1, y0) * fx;
    let bot = v(x0, y0 + 1) * (1.0 - fx) + v(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Warped location of pixel `(x, y)` plus the normalized coordinates needed
/// for the Jacobian. `None` when the point leaves the sampling margin of `b`.
fn warp_point(norm: &Normalizer, p: &Vec8, x: usize, y: usize, w: usize, h: usize, margin: f64) -> Option<[f64; 6]> {
    let nx = (x as f64 - norm.cx) / norm.s;
    let ny = (y as f64 - norm.cy) / norm.s;
    let d = p[6] * nx + p[7] * ny + 1.0;
    if d.abs() < 1e-9 {
        return None;
    }
    let mu = (p[0] * nx + p[1] * ny + p[2]) / d;
    let mv = (p[3] * nx + p[4] * ny + p[5]) / d;
    let qx = mu * norm.s + norm.cx;
    let qy = mv * norm.s + norm.cy;
    if !(qx >= margin && qy >= margin && qx <= (w - 1) as f64 - margin && qy <= (h - 1) as f64 - margin) {
        return None;
    }
    Some([qx, qy, nx, ny, mu, mv])
}

fn cost(a: &Image, b: &Image, norm: &Normalizer, p: &Vec8) -> Option<(f64, usize)> {
    let (w, h) = (a.width(), a.height());
    let mut sum = 0.0;
    let mut n = 0;
    let m = norm.margin as usize;
    for y in m..h - m {
        for x in m..w - m {
            if let Some([qx, qy, ..]) = warp_point(norm, p, x, y, w, h, norm.margin) {
                let r = bilinear(b, qx, qy) - a.get(x, y) as f64;
                sum += r * r;
                n += 1;
            }
        }
    }
    (n >= (w * h) / 8).then(|| (sum / n as f64, n))
}

fn normal_equations(a: &Image, b: &Image, gx: &Image, gy: &Image, norm: &Normalizer, p: &Vec8) -> Option<(Mat8, Vec8)> {
    let (w, h) = (a.width(), a.height());
    let mut jtj = Mat8::zeros();
    let mut jtr = Vec8::zeros();
    let mut n = 0usize;
    let m = norm.margin as usize;
    for y in m..h - m {
        for x in m..w - m {
            let Some([qx, qy, nx, ny, mu, mv]) = warp_point(norm, p, x, y, w, h, norm.margin) else { continue };
            let d = p[6] * nx + p[7] * ny + 1.0;
            let r = bilinear(b, qx, qy) - a.get(x, y) as f64;
            let ix = bilinear(gx, qx, qy) * norm.s;
            let iy = bilinear(gy, qx, qy) * norm.s;
            let j = Vec8::from_iterator([
                ix * nx / d,
                ix * ny / d,
                ix / d,
                iy * nx / d,
                iy * ny / d,
                iy / d,
                -(ix * mu + iy * mv) * nx / d,
                -(ix * mu + iy * mv) * ny / d,
            ]);
            jtj += j * j.transpose();
            jtr += j * r;
            n += 1;
        }
    }
    (n >= (w * h) / 8).then_some((jtj / n as f64, jtr / n as f64))
}
