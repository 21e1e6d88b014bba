//! Single-octave ORB: FAST-9 corners, intensity-centroid orientation and a
//! steered 256-bit BRIEF descriptor.

use serde::{Deserialize, Serialize};

use super::brief_pattern::{BRIEF_PATTERN, PATTERN_RADIUS};
use crate::error::Result;
use crate::imagecore::{gaussian_blur, Image};

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    #[inline]
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Radians, from the intensity centroid.
    pub orientation: f64,
    pub response: f64,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbConfig {
    /// FAST intensity threshold on the `[0, 1]` scale.
    pub fast_threshold: f32,
    pub max_keypoints: usize,
    /// Pre-smoothing applied before orientation and descriptor sampling.
    pub smoothing_sigma: f64,
}

impl Default for OrbConfig {
    fn default() -> Self {
        Self { fast_threshold: 0.06, max_keypoints: 500, smoothing_sigma: 1.2 }
    }
}

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub const FAST_CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const ARC: usize = 9;

/// Keypoints keep this distance from the border so that rotated descriptor
/// samples stay inside the image.
pub const BORDER: usize = PATTERN_RADIUS as usize + 1;

fn has_arc(flags: &[bool; 16]) -> bool {
    let mut run = 0;
    for i in 0..32 {
        if flags[i % 16] {
            run += 1;
            if run >= ARC {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// FAST-9 segment test at `(x, y)`. Returns the corner score (sum of
/// threshold-exceeding differences on the winning side) or `None`.
pub fn fast_score(img: &Image, x: usize, y: usize, threshold: f32) -> Option<f32> {
    if x < 3 || y < 3 || x + 3 >= img.width() || y + 3 >= img.height() {
        return None;
    }
    let c = img.get(x, y);
    let mut bright = [false; 16];
    let mut dark = [false; 16];
    let mut bright_sum = 0.0;
    let mut dark_sum = 0.0;
    for (i, &(dx, dy)) in FAST_CIRCLE.iter().enumerate() {
        let v = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
        if v > c + threshold {
            bright[i] = true;
            bright_sum += v - c - threshold;
        } else if v < c - threshold {
            dark[i] = true;
            dark_sum += c - threshold - v;
        }
    }
    let b = has_arc(&bright);
    let d = has_arc(&dark);
    match (b, d) {
        (false, false) => None,
        (true, false) => Some(bright_sum),
        (false, true) => Some(dark_sum),
        (true, true) => Some(bright_sum.max(dark_sum)),
    }
}

fn orientation(img: &Image, x: usize, y: usize) -> f64 {
    let r = PATTERN_RADIUS as isize;
    let (mut m10, mut m01) = (0.0f64, 0.0f64);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let v = img.get((x as isize + dx) as usize, (y as isize + dy) as usize) as f64;
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    m01.atan2(m10)
}

fn describe(img: &Image, x: usize, y: usize, angle: f64) -> Descriptor {
    let (s, c) = angle.sin_cos();
    let sample = |px: i8, py: i8| {
        let (px, py) = (px as f64, py as f64);
        let rx = (c * px - s * py).round() as isize;
        let ry = (s * px + c * py).round() as isize;
        img.get((x as isize + rx) as usize, (y as isize + ry) as usize)
    };
    let mut d = Descriptor::default();
    for (i, p) in BRIEF_PATTERN.iter().enumerate() {
        if sample(p[0], p[1]) < sample(p[2], p[3]) {
            d.0[i / 64] |= 1 << (i % 64);
        }
    }
    d
}

/// Parabolic peak offset in `[-0.5, 0.5]` from three samples.
fn parabola_peak(l: f32, c: f32, r: f32) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5) as f64
}

/// Raw FAST responses after 3×3 non-maximum suppression, inside the
/// descriptor border, sorted strongest first with ties by `(y, x)`.
pub fn fast_corners(img: &Image, threshold: f32) -> Vec<(usize, usize, f32)> {
    fast_corners_refined(img, threshold).into_iter().map(|c| (c.0, c.1, c.2)).collect()
}

/// As [`fast_corners`], plus a sub-pixel offset from a parabola fit of the
/// score surface.
fn fast_corners_refined(img: &Image, threshold: f32) -> Vec<(usize, usize, f32, f64, f64)> {
    let (w, h) = (img.width(), img.height());
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Vec::new();
    }
    let mut scores = vec![0f32; w * h];
    for y in 3..h.saturating_sub(3) {
        for x in 3..w.saturating_sub(3) {
            if let Some(s) = fast_score(img, x, y, threshold) {
                scores[y * w + x] = s;
            }
        }
    }
    let mut out = Vec::new();
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let s = scores[y * w + x];
            if s <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                    let n = scores[ny * w + nx];
                    // Equal neighbors: the earlier pixel in raster order wins.
                    if n > s || (n == s && (ny, nx) < (y, x)) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                let at = |dx: isize, dy: isize| scores[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                let ox = parabola_peak(at(-1, 0), s, at(1, 0));
                let oy = parabola_peak(at(0, -1), s, at(0, 1));
                out.push((x, y, s, ox, oy));
            }
        }
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    out
}

pub fn detect_keypoints_with(img: &Image, cfg: &OrbConfig) -> Result<Vec<Keypoint>> {
    let mut corners = fast_corners_refined(img, cfg.fast_threshold);
    corners.truncate(cfg.max_keypoints);
    if corners.is_empty() {
        return Ok(Vec::new());
    }
    let smooth = gaussian_blur(img, 5, cfg.smoothing_sigma)?;
    Ok(corners
        .into_iter()
        .map(|(x, y, s, ox, oy)| {
            let angle = orientation(&smooth, x, y);
            Keypoint {
                x: x as f64 + ox,
                y: y as f64 + oy,
                orientation: angle,
                response: s as f64,
                descriptor: describe(&smooth, x, y, angle),
            }
        })
        .collect())
}

/// At most `max_n` keypoints with default settings, strongest first.
pub fn detect_keypoints(img: &Image, max_n: usize) -> Vec<Keypoint> {
    let cfg = OrbConfig { max_keypoints: max_n, ..Default::default() };
    detect_keypoints_with(img, &cfg).unwrap_or_default()
}
