use rand::seq::index::sample;

use super::{solve_dlt, Homography};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub type Correspondence = ((f64, f64), (f64, f64));

#[derive(Debug, Clone)]
pub struct RansacResult {
    pub homography: Homography,
    pub inlier_mask: Vec<bool>,
    pub inliers: usize,
    /// Mean symmetric transfer error over the inliers.
    pub mean_error: f64,
}

/// Symmetric transfer error: the larger of the forward and backward
/// reprojection distances.
pub fn symmetric_error(h: &Homography, inv: &Homography, c: &Correspondence) -> f64 {
    let ((sx, sy), (dx, dy)) = *c;
    let fwd = match h.apply(sx, sy) {
        Some((u, v)) => ((u - dx).powi(2) + (v - dy).powi(2)).sqrt(),
        None => return f64::INFINITY,
    };
    let bwd = match inv.apply(dx, dy) {
        Some((u, v)) => ((u - sx).powi(2) + (v - sy).powi(2)).sqrt(),
        None => return f64::INFINITY,
    };
    fwd.max(bwd)
}

fn score(h: &Homography, pairs: &[Correspondence], inlier_px: f64) -> Option<(Vec<bool>, usize, f64)> {
    let inv = h.inverse().ok()?;
    let mut mask = vec![false; pairs.len()];
    let mut count = 0;
    let mut total = 0.0;
    for (m, c) in mask.iter_mut().zip(pairs) {
        let e = symmetric_error(h, &inv, c);
        if e <= inlier_px {
            *m = true;
            count += 1;
            total += e;
        }
    }
    Some((mask, count, total))
}

fn collinear(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs() < 1e-6
}

fn degenerate(pts: &[(f64, f64)]) -> bool {
    (0..4).any(|skip| {
        let t: Vec<_> = (0..4).filter(|&i| i != skip).map(|i| pts[i]).collect();
        collinear(t[0], t[1], t[2])
    })
}

/// Classic RANSAC over 4-point minimal samples with a normalized-DLT refit
/// on the winning consensus set. Deterministic for a given seed.
pub fn estimate_homography_ransac(
    pairs: &[Correspondence],
    iters: usize,
    inlier_px: f64,
    seed: u64,
) -> Result<RansacResult> {
    estimate_observed(pairs, iters, inlier_px, seed, |_| {})
}

/// RANSAC restricted to hypotheses accepted by `plausible` (applied to both
/// minimal-sample candidates and the final refit).
pub fn estimate_homography_ransac_filtered(
    pairs: &[Correspondence],
    iters: usize,
    inlier_px: f64,
    seed: u64,
    plausible: impl Fn(&Homography) -> bool,
) -> Result<RansacResult> {
    run(pairs, iters, inlier_px, seed, |_| {}, plausible)
}

/// As [`estimate_homography_ransac`], reporting every candidate's inlier
/// count to `observe`.
pub fn estimate_observed(
    pairs: &[Correspondence],
    iters: usize,
    inlier_px: f64,
    seed: u64,
    observe: impl FnMut(usize),
) -> Result<RansacResult> {
    run(pairs, iters, inlier_px, seed, observe, |_| true)
}

fn run(
    pairs: &[Correspondence],
    iters: usize,
    inlier_px: f64,
    seed: u64,
    mut observe: impl FnMut(usize),
    plausible: impl Fn(&Homography) -> bool,
) -> Result<RansacResult> {
    if pairs.len() < 4 {
        return Err(Error::InsufficientData(format!("RANSAC needs at least 4 pairs, got {}", pairs.len())));
    }
    let mut rng = rng::stream(seed, Domain::Ransac, 0, 0);
    let mut best: Option<(Homography, Vec<bool>, usize, f64)> = None;
    for _ in 0..iters {
        let idx = sample(&mut rng, pairs.len(), 4);
        let src: Vec<(f64, f64)> = idx.iter().map(|i| pairs[i].0).collect();
        let dst: Vec<(f64, f64)> = idx.iter().map(|i| pairs[i].1).collect();
        if degenerate(&src) || degenerate(&dst) {
            continue;
        }
        let Ok(h) = solve_dlt(&src, &dst) else { continue };
        if !plausible(&h) {
            continue;
        }
        let Some((mask, count, total)) = score(&h, pairs, inlier_px) else { continue };
        observe(count);
        let better = match &best {
            None => true,
            Some((_, _, bc, bt)) => count > *bc || (count == *bc && total < *bt),
        };
        if better {
            best = Some((h, mask, count, total));
        }
    }
    let (h, mask, count, total) = match best {
        Some(b) if b.2 >= 4 => b,
        _ => return Err(Error::NoConsensus("no model reached 4 inliers".into())),
    };

    let src: Vec<_> = pairs.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| c.0).collect();
    let dst: Vec<_> = pairs.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| c.1).collect();
    if let Some(refit) = solve_dlt(&src, &dst).ok().filter(|h| plausible(h)) {
        if let Some((rmask, rcount, rtotal)) = score(&refit, pairs, inlier_px) {
            if rcount >= count {
                return Ok(RansacResult {
                    homography: refit,
                    inlier_mask: rmask,
                    inliers: rcount,
                    mean_error: rtotal / rcount as f64,
                });
            }
        }
    }
    Ok(RansacResult { homography: h, inlier_mask: mask, inliers: count, mean_error: total / count as f64 })
}
