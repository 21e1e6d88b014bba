use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{render_creases, IdentitySpec};
use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::imagecore::{warp_perspective, Image};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureConfig {
    /// Depth of the gain field; the field spans `[1 - amplitude, 1]`.
    pub amplitude: f64,
    /// Lattice cells across the image for the low-frequency noise.
    pub cells: usize,
    /// Share of the gain variation that is a global (per-image) offset.
    pub global_share: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self { amplitude: 0.5, cells: 3, global_share: 0.5 }
    }
}

impl TextureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.6).contains(&self.amplitude) {
            return Err(Error::invalid(format!("texture amplitude {} outside [0, 0.6]", self.amplitude)));
        }
        if self.cells == 0 {
            return Err(Error::invalid("texture lattice needs at least one cell"));
        }
        if !(0.0..=1.0).contains(&self.global_share) {
            return Err(Error::invalid("global_share must be in [0, 1]"));
        }
        Ok(())
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smooth value-noise field in `[0, 1]`.
fn value_noise(width: usize, height: usize, cells: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>()).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let gy = (y as f64 + 0.5) / height as f64 * cells as f64;
        let iy = (gy.floor() as usize).min(cells - 1);
        let fy = smoothstep(gy - iy as f64);
        for x in 0..width {
            let gx = (x as f64 + 0.5) / width as f64 * cells as f64;
            let ix = (gx.floor() as usize).min(cells - 1);
            let fx = smoothstep(gx - ix as f64);
            let v00 = lattice[iy * n + ix];
            let v10 = lattice[iy * n + ix + 1];
            let v01 = lattice[(iy + 1) * n + ix];
            let v11 = lattice[(iy + 1) * n + ix + 1];
            let top = v00 + (v10 - v00) * fx;
            let bottom = v01 + (v11 - v01) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Multiplies the crease raster into a smooth gain field in
/// `[1 - amplitude, 1]`. A pure function of `(creases, seed, cfg)`.
pub fn composite_texture(creases: &Image, seed: u64, cfg: &TextureConfig) -> Result<Image> {
    cfg.validate()?;
    if cfg.amplitude == 0.0 {
        return Ok(creases.clone());
    }
    let mut rng = rng::stream(seed, Domain::Texture, 0, 0);
    let global: f64 = rng.gen();
    let noise = value_noise(creases.width(), creases.height(), cfg.cells, &mut rng);
    let mut out = creases.clone();
    for (v, n) in out.pixels_mut().iter_mut().zip(noise) {
        let w = cfg.global_share * global + (1.0 - cfg.global_share) * n;
        let gain = 1.0 - cfg.amplitude * w;
        *v = ((*v as f64) * gain).clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}

/// Capture-to-capture perspective jitter of the real-analog corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerspectiveConfig {
    /// Largest per-axis corner offset in pixels.
    pub max_corner_offset: f64,
}

impl Default for PerspectiveConfig {
    fn default() -> Self {
        Self { max_corner_offset: 3.0 }
    }
}

impl PerspectiveConfig {
    pub fn sample(&self, width: usize, height: usize, rng: &mut rng::Rng) -> Result<Homography> {
        let m = self.max_corner_offset;
        if m == 0.0 {
            return Ok(Homography::identity());
        }
        let mut offs = [(0.0, 0.0); 4];
        for o in &mut offs {
            *o = (rng.gen_range(-m..=m), rng.gen_range(-m..=m));
        }
        Homography::from_corner_offsets(width, height, offs)
    }
}

/// One "capture" of an identity: perspective-jittered crease raster with a
/// skin-like gain field. Returns the image and the jitter applied.
pub fn render_sample(
    spec: &IdentitySpec,
    res: usize,
    sample_index: u64,
    perspective: &PerspectiveConfig,
    texture: &TextureConfig,
) -> Result<(Image, Homography)> {
    let creases = render_creases(spec, res, res)?;
    let mut prng = rng::stream(spec.seed, Domain::Perspective, 0, sample_index);
    let h = perspective.sample(res, res, &mut prng)?;
    let warped = warp_perspective(&creases, &h, 1.0)?;
    let tex_seed = {
        use rand::RngCore;
        rng::stream(spec.seed, Domain::Texture, 1, sample_index).next_u64()
    };
    Ok((composite_texture(&warped, tex_seed, texture)?, h))
}
