use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::diffusion::{sample_requests, NoiseSchedule, SampleRequest};
use crate::error::{Error, Result};
use crate::eval::MatcherModel;
use crate::geometry::{sample_entry, HomographyBank};
use crate::imagecore::io::quantize;
use crate::imagecore::{warp_binary_nearest, BinaryImage, Image};
use crate::lineextract::{extract_lines, LineExtractConfig};
use crate::nn::DenoiserParams;
use crate::rng::{self, Domain, Rng};

/// How quality tokens are chosen for generated images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityPolicy {
    /// Always the top token.
    High,
    /// Uniform over all tokens.
    Uniform,
    /// Uniform over the listed tokens.
    Tokens(Vec<usize>),
}

impl QualityPolicy {
    fn draw(&self, q: usize, rng: &mut Rng) -> Result<usize> {
        match self {
            QualityPolicy::High => Ok(q - 1),
            QualityPolicy::Uniform => Ok(rng.gen_range(0..q)),
            QualityPolicy::Tokens(t) => {
                if t.is_empty() || t.iter().any(|v| *v >= q) {
                    return Err(Error::invalid(format!("quality tokens {t:?} must be a non-empty subset of 0..{q}")));
                }
                Ok(t[rng.gen_range(0..t.len())])
            }
        }
    }
}

/// Quality token of `img` under a calibrated matcher.
pub fn quality_label(img: &Image, matcher: &MatcherModel) -> Result<usize> {
    matcher.quality_of_norm(matcher.embed(img)?.pre_norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthIdentity {
    pub identity_id: u64,
    pub seed: u64,
    pub quality: usize,
    pub image: Image,
}

/// One stage-one image per identity `0..n_ids`, each from its own noise
/// stream. Images are 8-bit quantized.
pub fn synthesize_identities(model: &DenoiserParams<f32>, sched: &NoiseSchedule, n_ids: usize, quality: &QualityPolicy, seed: u64) -> Result<Vec<SynthIdentity>> {
    if model.cfg.control {
        return Err(Error::invalid("identity synthesis needs a stage-one model"));
    }
    let mut reqs = Vec::with_capacity(n_ids);
    for id in 0..n_ids as u64 {
        let mut r = rng::stream(seed, Domain::Stage1, id, 0);
        let q = quality.draw(model.cfg.num_quality, &mut r)?;
        reqs.push(SampleRequest { quality: q, control: None, seed: r.next_u64() });
    }
    let out = sample_requests(model, sched, &reqs)?;
    Ok(out
        .images
        .into_iter()
        .zip(reqs)
        .enumerate()
        .map(|(i, (img, r))| SynthIdentity { identity_id: i as u64, seed: r.seed, quality: r.quality, image: quantize(&img) })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub identity_id: u64,
    pub index: usize,
    pub seed: u64,
    pub quality: usize,
    pub homography_index: usize,
    /// Warped line map the render was conditioned on.
    pub control: BinaryImage,
    pub image: Image,
}

/// `k` renders of each `(identity_id, image)`: line map of the identity
/// image, warped by a bank homography, as the control of a fresh
/// seed-derived noise stream per `(identity_id, render index)`. Output is
/// ordered by identity, then render index.
#[allow(clippy::too_many_arguments)]
pub fn render_identities(
    model: &DenoiserParams<f32>,
    sched: &NoiseSchedule,
    identities: &[(u64, &Image)],
    k: usize,
    bank: &HomographyBank,
    quality: &QualityPolicy,
    lines: &LineExtractConfig,
    seed: u64,
) -> Result<Vec<Render>> {
    if !model.cfg.control {
        return Err(Error::invalid("rendering needs a stage-two model"));
    }
    if bank.is_empty() {
        return Err(Error::BankEmpty);
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut meta = Vec::with_capacity(identities.len() * k);
    let mut reqs = Vec::with_capacity(identities.len() * k);
    for &(id, img) in identities {
        let base = extract_lines(img, lines)?;
        for idx in 0..k {
            let mut r = rng::stream(seed, Domain::Stage2, id, idx as u64);
            let (hi, h) = sample_entry(bank, r.next_u64())?;
            let q = quality.draw(model.cfg.num_quality, &mut r)?;
            let control = warp_binary_nearest(&base, &h)?;
            let s = r.next_u64();
            meta.push((id, idx, s, q, hi));
            reqs.push(SampleRequest { quality: q, control: Some(control), seed: s });
        }
    }
    let out = sample_requests(model, sched, &reqs)?;
    Ok(out
        .images
        .into_iter()
        .zip(reqs)
        .zip(meta)
        .map(|((img, req), (identity_id, index, seed, quality, homography_index))| Render {
            identity_id,
            index,
            seed,
            quality,
            homography_index,
            control: req.control.expect("stage-two request"),
            image: quantize(&img),
        })
        .collect())
}

/// `k` renders of a single identity image.
#[allow(clippy::too_many_arguments)]
pub fn render_variations(
    model: &DenoiserParams<f32>,
    sched: &NoiseSchedule,
    identity_image: &Image,
    k: usize,
    bank: &HomographyBank,
    quality: &QualityPolicy,
    lines: &LineExtractConfig,
    seed: u64,
) -> Result<Vec<Render>> {
    render_identities(model, sched, &[(0, identity_image)], k, bank, quality, lines, seed)
}
