use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar projective transform in pixel coordinates, `x' ~ H x`, stored with
/// `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

pub const MIN_ABS_DET: f64 = 1e-12;

impl Homography {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]] }
    }

    /// Validated constructor: scales so that `m[2][2] == 1` and rejects
    /// singular or non-finite matrices.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("homography has non-finite entries"));
        }
        let s = m[2][2];
        if s.abs() < 1e-15 {
            return Err(Error::invalid("homography cannot be normalized (m22 = 0)"));
        }
        let mut n = m;
        for row in &mut n {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        n[2][2] = 1.0;
        let h = Self { m: n };
        if h.det().abs() <= MIN_ABS_DET {
            return Err(Error::invalid(format!("singular homography (det = {:e})", h.det())));
        }
        Ok(h)
    }

    /// Unchecked constructor (no normalization, singular allowed).
    pub fn from_raw(m: [[f64; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn from_flat(v: &[f64; 9]) -> Result<Self> {
        Self::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn to_flat(&self) -> [f64; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if !(d.abs() > MIN_ABS_DET) {
            return Err(Error::invalid(format!("singular homography (det = {d:e})")));
        }
        let m = &self.m;
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        let mut inv = adj;
        for row in &mut inv {
            for v in row.iter_mut() {
                *v /= d;
            }
        }
        if inv[2][2].abs() < 1e-15 {
            return Ok(Self { m: inv });
        }
        Self::new(inv)
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Homography) -> Homography {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Homography::new(out).unwrap_or(Homography { m: out })
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if w.abs() < 1e-12 {
            return None;
        }
        Some(((m[0][0] * x + m[0][1] * y + m[0][2]) / w, (m[1][0] * x + m[1][1] * y + m[1][2]) / w))
    }

    pub fn image_corners(width: usize, height: usize) -> [(f64, f64); 4] {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
    }

    /// Largest displacement (pixels) of the four image corners.
    pub fn corner_displacement(&self, width: usize, height: usize) -> f64 {
        Self::image_corners(width, height)
            .iter()
            .map(|&(x, y)| match self.apply(x, y) {
                Some((u, v)) => ((u - x).powi(2) + (v - y).powi(2)).sqrt(),
                None => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    /// Largest distance between where `self` and `other` send the corners.
    pub fn corner_distance(&self, other: &Homography, width: usize, height: usize) -> f64 {
        Self::image_corners(width, height)
            .iter()
            .map(|&(x, y)| match (self.apply(x, y), other.apply(x, y)) {
                (Some(a), Some(b)) => ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    /// Transform that moves the four image corners (TL, TR, BR, BL) by the
    /// given offsets.
    pub fn from_corner_offsets(width: usize, height: usize, offsets: [(f64, f64); 4]) -> Result<Self> {
        let src = Self::image_corners(width, height);
        let dst: Vec<(f64, f64)> = src.iter().zip(&offsets).map(|(&(x, y), &(dx, dy))| (x + dx, y + dy)).collect();
        solve_dlt(&src, &dst)
    }

    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        self.to_flat().iter().zip(other.to_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_flat().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        Homography::from_flat(&v).map_err(serde::de::Error::custom)
    }
}

/// Hartley normalization: zero centroid, mean distance √2.
fn normalization(points: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_dist = points.iter().map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Normalized direct linear transform, least squares over all
/// correspondences (`src[i] → dst[i]`).
pub fn solve_dlt(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Homography> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return Err(Error::InsufficientData(format!("need at least 4 correspondences, got {n}")));
    }
    let degenerate = || Error::DegenerateData("degenerate point configuration".into());
    let ts = normalization(src).ok_or_else(degenerate)?;
    let td = normalization(dst).ok_or_else(degenerate)?;
    let norm = |t: &Matrix3<f64>, p: (f64, f64)| (t[(0, 0)] * p.0 + t[(0, 2)], t[(1, 1)] * p.1 + t[(1, 2)]);

    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let (x, y) = norm(&ts, src[i]);
        let (u, v) = norm(&td, dst[i]);
        let r0 = 2 * i;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        let r1 = r0 + 1;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::NumericalFailure { location: "dlt".into(), detail: "svd failed".into() })?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or_else(degenerate)?;
    let full = td_inv * hn * ts;
    let m = [
        [full[(0, 0)], full[(0, 1)], full[(0, 2)]],
        [full[(1, 0)], full[(1, 1)], full[(1, 2)]],
        [full[(2, 0)], full[(2, 1)], full[(2, 2)]],
    ];
    Homography::new(m).map_err(|_| degenerate())
}
