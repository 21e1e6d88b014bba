use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::{make_schedule, noise_into, NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::imagecore::{BinaryImage, Image};
use crate::lineextract::{extract_lines, LineExtractConfig};
use crate::nn::{
    adam_step, init_denoiser, load_checkpoint, loss_and_grads, save_checkpoint, AdamConfig, AdamState, CheckpointFile, DenoiserConfig,
    DenoiserParams, Tensor, TrainBatch,
};
use crate::pipeline::DatasetManifest;
use crate::rng::{self, Domain, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub schedule: ScheduleKind,
    pub timesteps: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub base_lr: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub manifest: PathBuf,
    pub stage: Stage,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub ckpt_every: u64,
    /// Architecture; `timesteps`, `schedule` and `control` are overridden by the run.
    pub model: DenoiserConfig,
    /// Line extraction for stage-two control maps.
    pub lines: LineExtractConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::Linear,
            timesteps: 200,
            batch_size: 8,
            total_steps: 2000,
            base_lr: 2e-3,
            lr_min: 1e-5,
            seed: 0,
            manifest: PathBuf::new(),
            stage: Stage::One,
            ckpt_every: 500,
            model: DenoiserConfig { channels: [8, 16, 32], ..DenoiserConfig::default() },
            lines: LineExtractConfig::default(),
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps < 10 {
            return Err(Error::invalid(format!("T must be >= 10, got {}", self.timesteps)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if self.total_steps == 0 {
            return Err(Error::invalid("total_steps must be >= 1"));
        }
        if !(self.base_lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.base_lr) {
            return Err(Error::invalid("learning rates must satisfy 0 <= lr_min <= base_lr, base_lr > 0"));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> DenoiserConfig {
        DenoiserConfig { timesteps: self.timesteps, schedule: self.schedule, control: self.stage == Stage::Two, ..self.model.clone() }
    }
}

/// One training image with its quality token and, for stage two, the line
/// map it must reproduce.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub image: Image,
    pub quality: usize,
    pub control: Option<BinaryImage>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub examples: Vec<TrainExample>,
}

impl TrainingSet {
    /// Stage two pairs every image with its own extracted line map.
    pub fn new(images: Vec<(Image, usize)>, stage: Stage, lines: &LineExtractConfig) -> Result<Self> {
        let examples = images
            .into_iter()
            .map(|(image, quality)| {
                let control = match stage {
                    Stage::One => None,
                    Stage::Two => Some(extract_lines(&image, lines)?),
                };
                Ok(TrainExample { image, quality, control })
            })
            .collect::<Result<_>>()?;
        Ok(Self { examples })
    }

    /// Loads every record of a manifest. Unlabeled records get the highest
    /// quality token.
    pub fn from_manifest(m: &DatasetManifest, cfg: &TrainRunConfig) -> Result<Self> {
        let mc = cfg.model_config();
        let images = m
            .records
            .iter()
            .map(|r| {
                let q = r.quality_label.unwrap_or(mc.num_quality - 1);
                Ok((m.load_image(r, mc.resolution)?, q))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(images, cfg.stage, &cfg.lines)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

pub fn loss_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("step,loss,lr\n");
    for r in log {
        s.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
    }
    s
}

/// Trailing moving average of the loss with the given window.
pub fn smoothed_losses(log: &[LossRecord], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(log.len());
    let mut acc = 0.0;
    for (i, r) in log.iter().enumerate() {
        acc += r.loss;
        if i >= w {
            acc -= log[i - w].loss;
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub cfg: TrainRunConfig,
    pub schedule: NoiseSchedule,
    pub params: DenoiserParams<f32>,
    pub adam: AdamState<f32>,
    pub rng: Rng,
    pub log: Vec<LossRecord>,
}

pub(crate) const MODEL_KIND: &str = "palmforge-denoiser";

impl TrainState {
    /// Fresh run. Stage two starts from `init` (a stage-one model); stage one
    /// starts from `init` if given, else from a seeded initialization.
    pub fn new(cfg: TrainRunConfig, init: Option<&DenoiserParams<f32>>) -> Result<Self> {
        cfg.validate()?;
        let mc = cfg.model_config();
        let params = match (cfg.stage, init) {
            (Stage::One, None) => init_denoiser(&mc, cfg.seed)?,
            (Stage::Two, None) => return Err(Error::invalid("stage two needs a stage-one model to start from")),
            (_, Some(p)) => {
                let base = if cfg.stage == Stage::Two && !p.cfg.control { p.with_control(cfg.seed)? } else { p.clone() };
                if base.cfg != mc {
                    return Err(Error::invalid("initial model architecture does not match the run config"));
                }
                base
            }
        };
        let schedule = make_schedule(cfg.schedule, cfg.timesteps)?;
        let adam = AdamState::new(AdamConfig::new(cfg.base_lr, cfg.total_steps, cfg.lr_min), &params.tensors);
        let rng = rng::stream(cfg.seed, Domain::Training, 0, 0);
        Ok(Self { cfg, schedule, params, adam, rng, log: Vec::new() })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn is_done(&self) -> bool {
        self.adam.step >= self.cfg.total_steps
    }

    /// Draws one batch: example indices, timesteps, then Gaussian noise.
    fn draw_batch(&mut self, data: &TrainingSet) -> Result<TrainBatch<f32>> {
        let b = self.cfg.batch_size;
        let res = self.params.cfg.resolution;
        let plane = res * res;
        let mut idx = Vec::with_capacity(b);
        let mut t = Vec::with_capacity(b);
        for _ in 0..b {
            idx.push(self.rng.gen_range(0..data.len()));
            t.push(self.rng.gen_range(0..self.cfg.timesteps));
        }
        let eps: Vec<f32> = (0..b * plane).map(|_| self.rng.sample::<f32, _>(StandardNormal)).collect();
        let mut x = Vec::with_capacity(b * plane);
        let mut quality = Vec::with_capacity(b);
        let mut control = self.params.cfg.control.then(|| Vec::with_capacity(b * plane));
        for (k, &i) in idx.iter().enumerate() {
            let ex = &data.examples[i];
            if ex.image.width() != res || ex.image.height() != res {
                return Err(Error::invalid(format!("training image {i} is not {res}x{res}")));
            }
            let start = x.len();
            x.extend(ex.image.pixels().iter().map(|v| 2.0 * v - 1.0));
            noise_into(&mut x[start..], &eps[k * plane..(k + 1) * plane], t[k], &self.schedule);
            quality.push(ex.quality);
            if let Some(c) = control.as_mut() {
                let lines = ex.control.as_ref().ok_or_else(|| Error::invalid("stage-two example without a control map"))?;
                c.extend(lines.bits().iter().map(|&v| v as f32));
            }
        }
        let shape = [b, 1, res, res];
        Ok(TrainBatch {
            x_t: Tensor::from_vec(&shape, x)?,
            eps: Tensor::from_vec(&shape, eps)?,
            t,
            quality,
            control: control.map(|c| Tensor::from_vec(&shape, c)).transpose()?,
        })
    }

    /// One optimizer step.
    pub fn step(&mut self, data: &TrainingSet) -> Result<LossRecord> {
        if data.is_empty() {
            return Err(Error::InsufficientData("training set is empty".into()));
        }
        let step = self.adam.step;
        let lr = self.adam.current_lr();
        let batch = self.draw_batch(data)?;
        let (loss, grads) = loss_and_grads(&self.params, &batch).map_err(|e| match e {
            Error::NumericalFailure { location, detail } => Error::NumericalFailure { location: format!("step {step}, {location}"), detail },
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::NumericalFailure { location: format!("step {step}"), detail: format!("loss {loss}") });
        }
        adam_step(&mut self.params.tensors, &grads, &mut self.adam)?;
        let rec = LossRecord { step, loss, lr };
        self.log.push(rec);
        Ok(rec)
    }

    /// Runs until `until` steps (capped at the configured total), calling
    /// `on_step` after every step.
    pub fn run(&mut self, data: &TrainingSet, until: u64, mut on_step: impl FnMut(&TrainState, &LossRecord) -> Result<()>) -> Result<()> {
        let until = until.min(self.cfg.total_steps);
        while self.adam.step < until {
            let rec = self.step(data)?;
            on_step(self, &rec)?;
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let (meta, tensors) = self.checkpoint_parts()?;
        let refs: Vec<(String, &Tensor<f32>)> = tensors.iter().map(|(n, t)| (n.clone(), *t)).collect();
        crate::nn::encode_checkpoint(&meta, &refs)
    }

    fn checkpoint_parts(&self) -> Result<(serde_json::Value, Vec<(String, &Tensor<f32>)>)> {
        let meta = serde_json::json!({
            "kind": MODEL_KIND,
            "model": self.params.cfg,
            "schedule": { "kind": self.schedule.kind, "timesteps": self.schedule.steps() },
            "train": {
                "config": self.cfg,
                "step": self.adam.step,
                "rng": serde_json::to_value(&self.rng)?,
                "log": self.log,
            },
        });
        let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
        for (n, t) in self.params.names.iter().zip(&self.params.tensors) {
            tensors.push((n.clone(), t));
        }
        for (n, t) in self.params.names.iter().zip(&self.adam.m) {
            tensors.push((format!("adam.m.{n}"), t));
        }
        for (n, t) in self.params.names.iter().zip(&self.adam.v) {
            tensors.push((format!("adam.v.{n}"), t));
        }
        Ok((meta, tensors))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (meta, tensors) = self.checkpoint_parts()?;
        save_checkpoint(path, &meta, &tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }

    pub fn from_checkpoint(ck: &CheckpointFile) -> Result<Self> {
        let params = model_from_checkpoint(ck)?;
        let train = ck.meta.get("train").ok_or_else(|| Error::Format("checkpoint has no training state".into()))?;
        let cfg: TrainRunConfig = serde_json::from_value(train["config"].clone())?;
        let step: u64 = serde_json::from_value(train["step"].clone())?;
        let rng: Rng = serde_json::from_value(train["rng"].clone())?;
        let log: Vec<LossRecord> = serde_json::from_value(train["log"].clone())?;
        let moments = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
            params
                .names
                .iter()
                .map(|n| ck.tensor(&format!("{prefix}.{n}")).cloned().ok_or_else(|| Error::Format(format!("checkpoint lacks {prefix}.{n}"))))
                .collect()
        };
        let adam = AdamState {
            cfg: AdamConfig::new(cfg.base_lr, cfg.total_steps, cfg.lr_min),
            m: moments("adam.m")?,
            v: moments("adam.v")?,
            step,
        };
        let schedule = make_schedule(cfg.schedule, cfg.timesteps)?;
        Ok(Self { cfg, schedule, params, adam, rng, log })
    }
}

/// Denoiser parameters from any checkpoint written by [`TrainState`].
pub fn model_from_checkpoint(ck: &CheckpointFile) -> Result<DenoiserParams<f32>> {
    if ck.meta.get("kind").and_then(|k| k.as_str()) != Some(MODEL_KIND) {
        return Err(Error::Format("not a denoiser checkpoint".into()));
    }
    let cfg: DenoiserConfig = serde_json::from_value(ck.meta["model"].clone())?;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, _) in cfg.layout() {
        let t = ck.tensor(&name).ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
        tensors.push(t.clone());
        names.push(name);
    }
    DenoiserParams::from_tensors(cfg, names, tensors)
}

/// Model and schedule stored in a checkpoint file.
pub fn load_model(path: impl AsRef<Path>) -> Result<(DenoiserParams<f32>, NoiseSchedule)> {
    let ck = load_checkpoint(path)?;
    let params = model_from_checkpoint(&ck)?;
    let kind: ScheduleKind = serde_json::from_value(ck.meta["schedule"]["kind"].clone())?;
    let steps: usize = serde_json::from_value(ck.meta["schedule"]["timesteps"].clone())?;
    Ok((params, make_schedule(kind, steps)?))
}

/// Manifest-driven training run writing into `out_dir`: periodic
/// `ckpt_<step>.pfck`, the final `model.pfck`, `loss.csv` and
/// `train_config.json`.
///
/// `model_in` is either a stage-one model (required for stage two) or a
/// checkpoint of this same run to resume from.
pub fn train(cfg: &TrainRunConfig, model_in: Option<&Path>, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let data = TrainingSet::from_manifest(&manifest, cfg)?;
    if data.is_empty() {
        return Err(Error::InsufficientData(format!("{} has no records", cfg.manifest.display())));
    }
    let mut state = match model_in {
        None => TrainState::new(cfg.clone(), None)?,
        Some(p) => {
            let ck = load_checkpoint(p)?;
            match TrainState::from_checkpoint(&ck) {
                Ok(s) if s.cfg == *cfg => s,
                _ => TrainState::new(cfg.clone(), Some(&model_from_checkpoint(&ck)?))?,
            }
        }
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("train_config.json"), serde_json::to_string_pretty(cfg)?.as_bytes())?;
    let every = cfg.ckpt_every;
    state.run(&data, cfg.total_steps, |s, rec| {
        if every > 0 && (rec.step + 1) % every == 0 {
            s.save(out_dir.join(format!("ckpt_{}.pfck", rec.step + 1)))?;
        }
        Ok(())
    })?;
    let model = out_dir.join("model.pfck");
    state.save(&model)?;
    write_file(&out_dir.join("loss.csv"), loss_csv(&state.log).as_bytes())?;
    Ok(model)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
