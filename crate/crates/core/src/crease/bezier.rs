use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

/// Cubic Bézier crease in normalized `[0,1]²` coordinates (y grows downward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BezierCurve {
    #[serde(rename = "cp")]
    pub control_points: [Point; 4],
    /// Stroke width in pixels at the rendering resolution.
    #[serde(rename = "width")]
    pub stroke_width: f64,
    /// Darkness in `(0, 1]`.
    pub intensity: f64,
}

impl BezierCurve {
    /// Polynomial (Bernstein) evaluation.
    pub fn eval(&self, t: f64) -> Point {
        let [p0, p1, p2, p3] = self.control_points;
        let s = 1.0 - t;
        let b = [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t];
        [
            b[0] * p0[0] + b[1] * p1[0] + b[2] * p2[0] + b[3] * p3[0],
            b[0] * p0[1] + b[1] * p1[1] + b[2] * p2[1] + b[3] * p3[1],
        ]
    }

    pub fn chord_length(&self) -> f64 {
        let [p0, _, _, p3] = self.control_points;
        ((p3[0] - p0[0]).powi(2) + (p3[1] - p0[1]).powi(2)).sqrt()
    }

    pub fn is_valid(&self) -> bool {
        self.control_points.iter().flatten().all(|v| (0.0..=1.0).contains(v))
            && self.stroke_width >= 0.5
            && self.intensity > 0.0
            && self.intensity <= 1.0
    }
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

/// One de Casteljau split at `t = 1/2`.
pub fn split_half(cp: &[Point; 4]) -> ([Point; 4], [Point; 4]) {
    let p01 = lerp(cp[0], cp[1], 0.5);
    let p12 = lerp(cp[1], cp[2], 0.5);
    let p23 = lerp(cp[2], cp[3], 0.5);
    let p012 = lerp(p01, p12, 0.5);
    let p123 = lerp(p12, p23, 0.5);
    let mid = lerp(p012, p123, 0.5);
    ([cp[0], p01, p012, mid], [mid, p123, p23, cp[3]])
}

fn dist_to_chord(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 < 1e-24 {
        return ((p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2)).sqrt();
    }
    ((p[0] - a[0]) * dy - (p[1] - a[1]) * dx).abs() / len2.sqrt()
}

/// Adaptive de Casteljau flattening: subdivides until both inner control
/// points are within `tolerance` of the chord. Coordinates are whatever space
/// the control points live in.
pub fn flatten(cp: &[Point; 4], tolerance: f64) -> Vec<Point> {
    fn rec(cp: &[Point; 4], tol: f64, depth: u32, out: &mut Vec<Point>) {
        let flat = dist_to_chord(cp[1], cp[0], cp[3]).max(dist_to_chord(cp[2], cp[0], cp[3])) <= tol;
        if flat || depth >= 16 {
            out.push(cp[3]);
            return;
        }
        let (l, r) = split_half(cp);
        rec(&l, tol, depth + 1, out);
        rec(&r, tol, depth + 1, out);
    }
    let mut out = vec![cp[0]];
    rec(cp, tolerance, 0, &mut out);
    out
}
