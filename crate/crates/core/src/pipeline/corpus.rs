use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestRecord, Source};
use super::synth::{render_identities, synthesize_identities, QualityPolicy};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::eval::MatcherModel;
use crate::geometry::HomographyBank;
use crate::imagecore::io::save_png;
use crate::lineextract::LineExtractConfig;
use crate::nn::DenoiserParams;

/// `ids/<id>/<file>`.
pub fn record_path(id: u64, file: &str) -> PathBuf {
    Path::new("ids").join(id.to_string()).join(file)
}

/// Builds a directory in a sibling scratch location and renames it into
/// place only if `build` succeeds; the scratch directory is removed on
/// failure. `dest` must not exist.
pub fn atomic_dir<T>(dest: &Path, build: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    if dest.exists() {
        return Err(Error::io(dest, std::io::Error::new(std::io::ErrorKind::AlreadyExists, "output directory already exists")));
    }
    let name = dest.file_name().ok_or_else(|| Error::invalid(format!("bad output path {}", dest.display())))?.to_string_lossy().into_owned();
    let parent = dest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(".{name}.partial"));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    match build(&tmp) {
        Ok(v) => {
            std::fs::rename(&tmp, dest).map_err(|e| Error::io(dest, e))?;
            Ok(v)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_ids: usize,
    pub renders_per_id: usize,
    pub seed: u64,
    /// Token for stage-one identity images.
    pub stage1_quality: QualityPolicy,
    /// Tokens for stage-two renders.
    pub render_quality: QualityPolicy,
    pub lines: LineExtractConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_ids: 200,
            renders_per_id: 20,
            seed: 0,
            stage1_quality: QualityPolicy::High,
            render_quality: QualityPolicy::Uniform,
            lines: LineExtractConfig::default(),
        }
    }
}

/// Trained artifacts a synthetic corpus is built from.
pub struct CorpusModels<'a> {
    pub stage1: &'a DenoiserParams<f32>,
    pub stage1_schedule: &'a NoiseSchedule,
    pub stage2: &'a DenoiserParams<f32>,
    pub stage2_schedule: &'a NoiseSchedule,
    pub bank: &'a HomographyBank,
    /// Labels every image when present; otherwise `quality_label` is empty.
    pub matcher: Option<&'a MatcherModel>,
}

/// Stage-one identities followed by `renders_per_id` stage-two renders of
/// each, written under `out` (`manifest.jsonl`, `ids/<id>/s1.png`,
/// `ids/<id>/r<k>.png`). Records are sorted by (identity, render index).
pub fn build_corpus(cfg: &CorpusConfig, models: &CorpusModels<'_>, out: &Path) -> Result<DatasetManifest> {
    if cfg.n_ids == 0 || cfg.renders_per_id == 0 {
        return Err(Error::invalid("n_ids and renders_per_id must be >= 1"));
    }
    if models.bank.is_empty() {
        return Err(Error::BankEmpty);
    }
    let ids = synthesize_identities(models.stage1, models.stage1_schedule, cfg.n_ids, &cfg.stage1_quality, cfg.seed)?;
    let sources: Vec<(u64, &crate::imagecore::Image)> = ids.iter().map(|s| (s.identity_id, &s.image)).collect();
    let renders = render_identities(
        models.stage2,
        models.stage2_schedule,
        &sources,
        cfg.renders_per_id,
        models.bank,
        &cfg.render_quality,
        &cfg.lines,
        cfg.seed,
    )?;
    let label = |img| models.matcher.map(|m| m.embed(img).and_then(|e| m.quality_of_norm(e.pre_norm))).transpose();
    let m = atomic_dir(out, |tmp| {
        let mut m = DatasetManifest::new(tmp);
        let mut it = renders.iter();
        for s in &ids {
            let dir = tmp.join(record_path(s.identity_id, ""));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let rel = record_path(s.identity_id, "s1.png");
            save_png(&s.image, tmp.join(&rel))?;
            m.records.push(ManifestRecord {
                identity_id: s.identity_id,
                image_path: rel,
                source: Source::Stage1,
                quality_label: label(&s.image)?,
                homography_index: None,
                seed: s.seed,
            });
            for _ in 0..cfg.renders_per_id {
                let r = it.next().expect("one render per job");
                let rel = record_path(r.identity_id, &format!("r{}.png", r.index));
                save_png(&r.image, tmp.join(&rel))?;
                m.records.push(ManifestRecord {
                    identity_id: r.identity_id,
                    image_path: rel,
                    source: Source::Stage2,
                    quality_label: label(&r.image)?,
                    homography_index: Some(r.homography_index),
                    seed: r.seed,
                });
            }
        }
        m.save(tmp.join("manifest.jsonl"))?;
        Ok(m)
    })?;
    Ok(DatasetManifest { records: m.records, root: out.to_path_buf() })
}
