//! Parameterized Bézier crease identities.
//!
//! An identity is a handful of long "principal" creases placed by palm-like
//! templates plus a scatter of short minor creases. Rendering produces a
//! light background with dark anti-aliased strokes; texturing multiplies in
//! a smooth skin-like gain field.

mod bezier;
mod render;
mod texture;

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use bezier::{flatten, split_half, BezierCurve, Point};
pub use render::{render_creases, render_strokes, StrokeRaster};
pub use texture::{composite_texture, render_sample, PerspectiveConfig, TextureConfig};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Minimum principal-crease chord, as a fraction of the unit-square diagonal.
pub const PRINCIPAL_MIN_SPAN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub id: u64,
    pub seed: u64,
    pub curves: Vec<BezierCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CreaseConfig {
    pub principal_count: (usize, usize),
    pub minor_count: (usize, usize),
    pub principal_width: (f64, f64),
    pub principal_intensity: (f64, f64),
    pub minor_width: (f64, f64),
    pub minor_intensity: (f64, f64),
    pub minor_length: (f64, f64),
    /// Endpoint / bulge jitter of the principal templates (normalized units).
    pub jitter: f64,
}

impl Default for CreaseConfig {
    fn default() -> Self {
        Self {
            principal_count: (2, 4),
            minor_count: (3, 10),
            principal_width: (1.2, 2.2),
            principal_intensity: (0.6, 0.95),
            minor_width: (0.8, 1.4),
            minor_intensity: (0.4, 0.65),
            minor_length: (0.12, 0.35),
            jitter: 0.06,
        }
    }
}

impl CreaseConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f64, f64), min: f64, max: f64| {
            if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max) {
                return Err(Error::invalid(format!("{name} range ({lo}, {hi}) outside [{min}, {max}]")));
            }
            Ok(())
        };
        let (pmin, pmax) = self.principal_count;
        let (mmin, mmax) = self.minor_count;
        if pmin > pmax || mmin > mmax {
            return Err(Error::invalid("curve count ranges must satisfy min <= max"));
        }
        if pmax > TEMPLATES.len() {
            return Err(Error::invalid(format!("at most {} principal creases are supported", TEMPLATES.len())));
        }
        if pmin + mmin == 0 {
            return Err(Error::invalid("identity needs at least one crease"));
        }
        range("principal_width", self.principal_width, 0.5, 16.0)?;
        range("minor_width", self.minor_width, 0.5, 16.0)?;
        range("principal_intensity", self.principal_intensity, 1e-6, 1.0)?;
        range("minor_intensity", self.minor_intensity, 1e-6, 1.0)?;
        range("minor_length", self.minor_length, 0.0, 1.0)?;
        range("jitter", (self.jitter, self.jitter), 0.0, 0.2)?;
        Ok(())
    }

    /// Total curve-count bounds `[n_min, n_max]`.
    pub fn curve_count_bounds(&self) -> (usize, usize) {
        (self.principal_count.0 + self.minor_count.0, self.principal_count.1 + self.minor_count.1)
    }
}

/// Principal crease template: start point, end point, perpendicular bulge.
struct Template {
    start: Point,
    end: Point,
    bulge: f64,
}

// Heart, head, life and fate lines of a right-palm ROI.
const TEMPLATES: [Template; 4] = [
    Template { start: [0.96, 0.20], end: [0.10, 0.30], bulge: -0.10 },
    Template { start: [0.05, 0.38], end: [0.94, 0.64], bulge: 0.08 },
    Template { start: [0.48, 0.24], end: [0.16, 0.98], bulge: 0.16 },
    Template { start: [0.58, 0.98], end: [0.50, 0.12], bulge: -0.04 },
];

fn clamp01(p: Point) -> Point {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

fn uniform(rng: &mut rng::Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Control points at one and two thirds of the chord, pushed sideways.
fn bowed(start: Point, end: Point, bulge1: f64, bulge2: f64) -> [Point; 4] {
    let (dx, dy) = (end[0] - start[0], end[1] - start[1]);
    let (nx, ny) = (-dy, dx);
    let at = |t: f64, b: f64| clamp01([start[0] + dx * t + nx * b, start[1] + dy * t + ny * b]);
    [clamp01(start), at(1.0 / 3.0, bulge1), at(2.0 / 3.0, bulge2), clamp01(end)]
}

fn principal(rng: &mut rng::Rng, tpl: &Template, cfg: &CreaseConfig) -> BezierCurve {
    let min_chord = PRINCIPAL_MIN_SPAN * std::f64::consts::SQRT_2;
    let j = cfg.jitter;
    let mut cp = bowed(tpl.start, tpl.end, tpl.bulge, tpl.bulge);
    for _ in 0..32 {
        let mut jit = |p: Point| [p[0] + rng.gen_range(-j..=j), p[1] + rng.gen_range(-j..=j)];
        let (s, e) = (clamp01(jit(tpl.start)), clamp01(jit(tpl.end)));
        let b1 = tpl.bulge + rng.gen_range(-1.0..=1.0) * 2.0 * j;
        let b2 = tpl.bulge + rng.gen_range(-1.0..=1.0) * 2.0 * j;
        let cand = bowed(s, e, b1, b2);
        let chord = ((cand[3][0] - cand[0][0]).powi(2) + (cand[3][1] - cand[0][1]).powi(2)).sqrt();
        if chord >= min_chord {
            cp = cand;
            break;
        }
    }
    BezierCurve {
        control_points: cp,
        stroke_width: uniform(rng, cfg.principal_width),
        intensity: uniform(rng, cfg.principal_intensity),
    }
}

fn minor(rng: &mut rng::Rng, cfg: &CreaseConfig) -> BezierCurve {
    let start = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let len = uniform(rng, cfg.minor_length);
    let end = clamp01([start[0] + len * angle.cos(), start[1] + len * angle.sin()]);
    let b1 = rng.gen_range(-0.25..0.25);
    let b2 = rng.gen_range(-0.25..0.25);
    BezierCurve {
        control_points: bowed(start, end, b1, b2),
        stroke_width: uniform(rng, cfg.minor_width),
        intensity: uniform(rng, cfg.minor_intensity),
    }
}

/// Samples one identity; a pure function of `(seed, cfg)`.
pub fn sample_identity(id: u64, seed: u64, cfg: &CreaseConfig) -> Result<IdentitySpec> {
    cfg.validate()?;
    let mut rng = rng::seeded(seed);
    let n_principal = rng.gen_range(cfg.principal_count.0..=cfg.principal_count.1);
    let n_minor = rng.gen_range(cfg.minor_count.0..=cfg.minor_count.1);
    let mut order: Vec<usize> = (0..TEMPLATES.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut curves = Vec::with_capacity(n_principal + n_minor);
    for &t in order.iter().take(n_principal) {
        curves.push(principal(&mut rng, &TEMPLATES[t], cfg));
    }
    for _ in 0..n_minor {
        curves.push(minor(&mut rng, cfg));
    }
    Ok(IdentitySpec { id, seed, curves })
}

/// Per-identity seed for identity `id` of a corpus drawn with `base_seed`.
pub fn identity_seed(base_seed: u64, id: u64) -> u64 {
    use rand::RngCore;
    rng::stream(base_seed, Domain::Identity, id, 0).next_u64()
}

/// `n` identities with ids `0..n` (offset by `first_id`).
pub fn sample_corpus(n: usize, first_id: u64, base_seed: u64, cfg: &CreaseConfig) -> Result<Vec<IdentitySpec>> {
    (0..n as u64)
        .map(|i| {
            let id = first_id + i;
            sample_identity(id, identity_seed(base_seed, id), cfg)
        })
        .collect()
}

pub fn save_identities(specs: &[IdentitySpec], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(specs)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_identities(path: impl AsRef<Path>) -> Result<Vec<IdentitySpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
