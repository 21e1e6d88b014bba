use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{detect_keypoints_with, estimate_homography_ransac_filtered, match_descriptors, refine_homography, Homography, OrbConfig};
use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankConfig {
    pub orb: OrbConfig,
    pub max_hamming: u32,
    pub ransac_iters: usize,
    pub inlier_px: f64,
    pub min_inliers: usize,
    /// Largest accepted corner displacement as a fraction of image width.
    pub max_disp_frac: f64,
    /// Levenberg-Marquardt iterations of photometric refinement applied to
    /// the RANSAC model; 0 disables it.
    pub refine_iters: usize,
    pub seed: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            orb: OrbConfig { fast_threshold: 0.02, ..OrbConfig::default() },
            max_hamming: 64,
            ransac_iters: 500,
            inlier_px: 2.0,
            min_inliers: 12,
            max_disp_frac: 0.12,
            refine_iters: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub m: Homography,
    pub inliers: usize,
    pub mean_err: f64,
    /// Provenance of the genuine pair.
    pub src: String,
}

/// Dictionary of perspective transforms observed between genuine pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomographyBank {
    pub entries: Vec<BankEntry>,
    pub cfg: BankConfig,
}

/// Why a pair did or did not contribute an entry.
#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Accepted { entry: usize },
    TooFewMatches(usize),
    NoConsensus,
    TooFewInliers(usize),
    TooLarge(f64),
}

/// Homography from `a` to `b` through ORB matching and RANSAC, without any
/// bank filtering.
pub fn estimate_pair(a: &Image, b: &Image, cfg: &BankConfig, seed: u64) -> Result<(Homography, usize, f64)> {
    let ka = detect_keypoints_with(a, &cfg.orb)?;
    let kb = detect_keypoints_with(b, &cfg.orb)?;
    let matches = match_descriptors(&ka, &kb, cfg.max_hamming);
    if matches.len() < 4 {
        return Err(Error::InsufficientData(format!("{} matches", matches.len())));
    }
    let pairs: Vec<_> = matches.iter().map(|&(i, j)| ((ka[i].x, ka[i].y), (kb[j].x, kb[j].y))).collect();
    let (w, h) = (a.width(), a.height());
    let max_disp = cfg.max_disp_frac * w as f64;
    let r = estimate_homography_ransac_filtered(&pairs, cfg.ransac_iters, cfg.inlier_px, seed, |m| {
        m.corner_displacement(w, h) <= max_disp
    })?;
    let mut m = r.homography;
    if cfg.refine_iters > 0 {
        let (refined, _) = refine_homography(a, b, &m, cfg.refine_iters)?;
        if refined.corner_displacement(w, h) <= max_disp {
            m = refined;
        }
    }
    Ok((m, r.inliers, r.mean_error))
}

impl HomographyBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Estimates one transform per genuine pair and keeps the ones with enough
/// inliers and a plausible corner displacement. Pairs are processed in
/// parallel and merged in input order.
pub fn build_homography_bank(
    genuine_pairs: &[(Image, Image)],
    sources: &[String],
    cfg: &BankConfig,
) -> Result<(HomographyBank, Vec<PairOutcome>)> {
    if genuine_pairs.is_empty() {
        return Err(Error::invalid("bank construction needs at least one pair"));
    }
    if sources.len() != genuine_pairs.len() {
        return Err(Error::invalid("one provenance label per pair is required"));
    }
    let estimates: Vec<_> = genuine_pairs
        .par_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let seed = {
                use rand::RngCore;
                rng::stream(cfg.seed, Domain::Ransac, 1, i as u64).next_u64()
            };
            estimate_pair(a, b, cfg, seed).map(|e| (e, a.width()))
        })
        .collect();

    let mut entries = Vec::new();
    let mut outcomes = Vec::with_capacity(estimates.len());
    for (i, est) in estimates.into_iter().enumerate() {
        let outcome = match est {
            Err(Error::InsufficientData(_)) => PairOutcome::TooFewMatches(0),
            Err(_) => PairOutcome::NoConsensus,
            Ok(((h, inliers, mean_err), width)) => {
                let disp = h.corner_displacement(width, width);
                if inliers < cfg.min_inliers {
                    PairOutcome::TooFewInliers(inliers)
                } else if disp > cfg.max_disp_frac * width as f64 {
                    PairOutcome::TooLarge(disp)
                } else {
                    entries.push(BankEntry { m: h, inliers, mean_err, src: sources[i].clone() });
                    PairOutcome::Accepted { entry: entries.len() - 1 }
                }
            }
        };
        outcomes.push(outcome);
    }
    if entries.is_empty() {
        return Err(Error::BankEmpty);
    }
    Ok((HomographyBank { entries, cfg: cfg.clone() }, outcomes))
}

/// Uniform draw over the bank; returns the entry index and transform.
pub fn sample_entry(bank: &HomographyBank, seed: u64) -> Result<(usize, Homography)> {
    if bank.entries.is_empty() {
        return Err(Error::BankEmpty);
    }
    let i = rng::stream(seed, Domain::Homography, 0, 0).gen_range(0..bank.entries.len());
    Ok((i, bank.entries[i].m))
}

pub fn sample_homography(bank: &HomographyBank, seed: u64) -> Result<Homography> {
    sample_entry(bank, seed).map(|(_, h)| h)
}
