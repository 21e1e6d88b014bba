use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::real::{Capture, RealCorpusConfig};
use super::synth::{render_identities, synthesize_identities, QualityPolicy, Render, SynthIdentity};
use crate::diffusion::{make_schedule, NoiseSchedule, Stage, TrainRunConfig, TrainState, TrainingSet};
use crate::error::Result;
use crate::eval::{identity_margin_bootstrap, train_matcher_on, MarginBootstrap, MatcherConfig, MatcherModel};
use crate::geometry::{build_homography_bank, BankConfig, HomographyBank};
use crate::imagecore::Image;
use crate::lineextract::{extract_lines, LineExtractConfig};

/// The desk-scale reference experiment: a real-analog corpus, a matcher
/// trained on it, a homography bank from its genuine pairs, and both
/// diffusion stages trained on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub seed: u64,
    pub real: RealCorpusConfig,
    pub matcher: MatcherConfig,
    pub bank: BankConfig,
    /// Genuine pairs offered to the bank (capture 0 against capture k).
    pub bank_pairs: usize,
    pub stage1: TrainRunConfig,
    pub stage2: TrainRunConfig,
    pub lines: LineExtractConfig,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        let stage1 = TrainRunConfig { total_steps: 2000, stage: Stage::One, ckpt_every: 0, seed: 1, ..TrainRunConfig::default() };
        let stage2 = TrainRunConfig { total_steps: 1000, stage: Stage::Two, seed: 2, ..stage1.clone() };
        Self {
            seed: 0,
            real: RealCorpusConfig::default(),
            matcher: MatcherConfig::default(),
            bank: BankConfig::default(),
            bank_pairs: 120,
            stage1,
            stage2,
            lines: LineExtractConfig::default(),
        }
    }
}

pub struct ReferenceModels {
    pub captures: Vec<Capture>,
    /// Quality token of every capture under `matcher`.
    pub capture_quality: Vec<usize>,
    pub matcher: MatcherModel,
    pub bank: HomographyBank,
    pub stage1: TrainState,
    pub stage2: TrainState,
    /// Wall-clock seconds per phase.
    pub timings: Vec<(String, f64)>,
}

impl ReferenceModels {
    pub fn schedule(&self) -> &NoiseSchedule {
        &self.stage1.schedule
    }
}

/// Trains everything the reference experiment needs. `progress` receives
/// one line per finished phase and periodic training losses.
pub fn train_reference(cfg: &ReferenceConfig, mut progress: impl FnMut(&str)) -> Result<ReferenceModels> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>, progress: &mut dyn FnMut(&str)| {
        let s = clock.elapsed().as_secs_f64();
        clock = Instant::now();
        progress(&format!("{name}: {s:.1}s"));
        timings.push((name.to_string(), s));
    };

    let real = RealCorpusConfig { seed: cfg.seed, ..cfg.real.clone() };
    let captures = real.captures()?;
    lap("real corpus", &mut timings, &mut progress);

    let images: Vec<Image> = captures.iter().map(|c| c.image.clone()).collect();
    let labels: Vec<usize> = captures.iter().map(|c| (c.identity_id - real.first_id) as usize).collect();
    let matcher = train_matcher_on(&images, &labels, &cfg.matcher, cfg.seed)?;
    let capture_quality =
        matcher.embed_all(&images)?.iter().map(|e| matcher.quality_of_norm(e.pre_norm)).collect::<Result<Vec<_>>>()?;
    lap("matcher", &mut timings, &mut progress);

    let per = real.images_per_id;
    let mut pairs = Vec::new();
    let mut sources = Vec::new();
    if per > 1 {
        for p in 0..cfg.bank_pairs.min(real.n_ids * (per - 1)) {
            let (id, k) = (p % real.n_ids, 1 + (p / real.n_ids) % (per - 1));
            pairs.push((images[id * per].clone(), images[id * per + k].clone()));
            sources.push(format!("id{}:0-{k}", captures[id * per].identity_id));
        }
    }
    let bank = if pairs.is_empty() {
        return Err(crate::Error::InsufficientData("bank needs at least two captures per identity".into()));
    } else {
        build_homography_bank(&pairs, &sources, &BankConfig { seed: cfg.seed, ..cfg.bank.clone() })?.0
    };
    lap("homography bank", &mut timings, &mut progress);

    let labeled: Vec<(Image, usize)> = images.iter().cloned().zip(capture_quality.iter().copied()).collect();
    let s1_cfg = TrainRunConfig { stage: Stage::One, ..cfg.stage1.clone() };
    let data1 = TrainingSet::new(labeled.clone(), Stage::One, &cfg.lines)?;
    let mut stage1 = TrainState::new(s1_cfg, None)?;
    let report_every = (stage1.cfg.total_steps / 10).max(1);
    stage1.run(&data1, u64::MAX, |_, r| {
        if (r.step + 1) % report_every == 0 {
            progress(&format!("  stage one step {} loss {:.4}", r.step + 1, r.loss));
        }
        Ok(())
    })?;
    lap("stage one", &mut timings, &mut progress);

    let s2_cfg = TrainRunConfig { stage: Stage::Two, ..cfg.stage2.clone() };
    let data2 = TrainingSet::new(labeled, Stage::Two, &cfg.lines)?;
    let mut stage2 = TrainState::new(s2_cfg, Some(&stage1.params))?;
    let report_every = (stage2.cfg.total_steps / 10).max(1);
    stage2.run(&data2, u64::MAX, |_, r| {
        if (r.step + 1) % report_every == 0 {
            progress(&format!("  stage two step {} loss {:.4}", r.step + 1, r.loss));
        }
        Ok(())
    })?;
    lap("stage two", &mut timings, &mut progress);

    Ok(ReferenceModels { captures, capture_quality, matcher, bank, stage1, stage2, timings })
}

/// Synthetic identities and their renders from the reference models.
pub struct SyntheticSet {
    pub identities: Vec<SynthIdentity>,
    pub renders: Vec<Render>,
}

pub fn synthesize_reference(models: &ReferenceModels, n_ids: usize, renders_per_id: usize, lines: &LineExtractConfig, seed: u64) -> Result<SyntheticSet> {
    let identities = synthesize_identities(&models.stage1.params, &models.stage1.schedule, n_ids, &QualityPolicy::High, seed)?;
    let sources: Vec<(u64, &Image)> = identities.iter().map(|s| (s.identity_id, &s.image)).collect();
    let renders = render_identities(
        &models.stage2.params,
        &models.stage2.schedule,
        &sources,
        renders_per_id,
        &models.bank,
        &QualityPolicy::Uniform,
        lines,
        seed,
    )?;
    Ok(SyntheticSet { identities, renders })
}

/// Identity-preservation statistics of a rendered set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreservationReport {
    pub margin: MarginBootstrap,
    /// Mean IoU between each render's line map and its warped control.
    pub mean_iou: f64,
    /// Mean pairwise line-map IoU between different identities' stage-one images.
    pub inter_identity_iou: f64,
    /// Mean line-map IoU between renders of the same identity.
    pub intra_identity_iou: f64,
}

pub fn identity_preservation(set: &SyntheticSet, matcher: &MatcherModel, lines: &LineExtractConfig, seed: u64) -> Result<PreservationReport> {
    let images: Vec<Image> = set.renders.iter().map(|r| r.image.clone()).collect();
    let labels: Vec<u64> = set.renders.iter().map(|r| r.identity_id).collect();
    let margin = identity_margin_bootstrap(&matcher.embed_all(&images)?, &labels, 2000, 0.95, seed)?;
    let maps = set.renders.iter().map(|r| extract_lines(&r.image, lines)).collect::<Result<Vec<_>>>()?;
    let mean_iou = maps.iter().zip(&set.renders).map(|(m, r)| m.iou(&r.control)).sum::<f64>() / maps.len().max(1) as f64;
    let id_maps = set.identities.iter().map(|s| extract_lines(&s.image, lines)).collect::<Result<Vec<_>>>()?;
    let (mut inter, mut ni) = (0.0, 0usize);
    for i in 0..id_maps.len() {
        for j in i + 1..id_maps.len() {
            inter += id_maps[i].iou(&id_maps[j]);
            ni += 1;
        }
    }
    let (mut intra, mut na) = (0.0, 0usize);
    for i in 0..maps.len() {
        for j in i + 1..maps.len() {
            if labels[i] == labels[j] {
                intra += maps[i].iou(&maps[j]);
                na += 1;
            }
        }
    }
    Ok(PreservationReport {
        margin,
        mean_iou,
        inter_identity_iou: inter / ni.max(1) as f64,
        intra_identity_iou: intra / na.max(1) as f64,
    })
}

/// Schedule shared by both reference stages.
pub fn reference_schedule(cfg: &ReferenceConfig) -> Result<NoiseSchedule> {
    make_schedule(cfg.stage1.schedule, cfg.stage1.timesteps)
}
