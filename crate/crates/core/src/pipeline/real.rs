use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{atomic_dir, record_path};
use super::manifest::{DatasetManifest, ManifestRecord, Source};
use crate::crease::{render_sample, sample_corpus, save_identities, CreaseConfig, IdentitySpec, PerspectiveConfig, TextureConfig};
use crate::error::{Error, Result};
use crate::imagecore::io::{quantize, save_png};
use crate::imagecore::Image;

/// The "real-analog" corpus: rendered crease identities captured several
/// times each under perspective jitter and varying skin texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealCorpusConfig {
    pub n_ids: usize,
    pub images_per_id: usize,
    pub first_id: u64,
    pub seed: u64,
    pub resolution: usize,
    pub crease: CreaseConfig,
    pub perspective: PerspectiveConfig,
    pub texture: TextureConfig,
}

impl Default for RealCorpusConfig {
    fn default() -> Self {
        Self {
            n_ids: 200,
            images_per_id: 10,
            first_id: 0,
            seed: 0,
            resolution: crate::CANONICAL_RES,
            crease: CreaseConfig::default(),
            perspective: PerspectiveConfig::default(),
            texture: TextureConfig::default(),
        }
    }
}

/// One capture of a real-analog identity.
#[derive(Debug, Clone)]
pub struct Capture {
    pub identity_id: u64,
    pub index: usize,
    pub seed: u64,
    pub image: Image,
}

impl RealCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ids == 0 || self.images_per_id == 0 {
            return Err(Error::invalid("n_ids and images_per_id must be >= 1"));
        }
        if self.resolution < 32 {
            return Err(Error::invalid("resolution must be >= 32"));
        }
        self.crease.validate()?;
        self.texture.validate()
    }

    pub fn identities(&self) -> Result<Vec<IdentitySpec>> {
        sample_corpus(self.n_ids, self.first_id, self.seed, &self.crease)
    }

    /// Every capture, 8-bit quantized exactly as it would be stored,
    /// ordered by (identity, capture index).
    pub fn captures(&self) -> Result<Vec<Capture>> {
        self.validate()?;
        let specs = self.identities()?;
        let jobs: Vec<(&IdentitySpec, usize)> = specs.iter().flat_map(|s| (0..self.images_per_id).map(move |k| (s, k))).collect();
        jobs.par_iter()
            .map(|(s, k)| {
                let (img, _) = render_sample(s, self.resolution, *k as u64, &self.perspective, &self.texture)?;
                Ok(Capture { identity_id: s.id, index: *k, seed: s.seed, image: quantize(&img) })
            })
            .collect()
    }
}

/// Writes the corpus under `out` (which must not exist yet):
/// `manifest.jsonl`, `identities.json` and `ids/<id>/r<k>.png`.
pub fn generate_real_corpus(cfg: &RealCorpusConfig, out: &Path) -> Result<DatasetManifest> {
    let caps = cfg.captures()?;
    let specs = cfg.identities()?;
    atomic_dir(out, |tmp| {
        let mut m = DatasetManifest::new(tmp);
        for c in &caps {
            let rel: PathBuf = record_path(c.identity_id, &format!("r{}.png", c.index));
            let path = tmp.join(&rel);
            std::fs::create_dir_all(path.parent().expect("nested")).map_err(|e| Error::io(&path, e))?;
            save_png(&c.image, &path)?;
            m.records.push(ManifestRecord {
                identity_id: c.identity_id,
                image_path: rel,
                source: Source::RealAnalog,
                quality_label: None,
                homography_index: None,
                seed: c.seed,
            });
        }
        save_identities(&specs, tmp.join("identities.json"))?;
        m.save(tmp.join("manifest.jsonl"))?;
        Ok(m)
    })
    .map(|mut m| {
        m.root = out.to_path_buf();
        m
    })
}
