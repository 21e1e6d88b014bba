use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::nn::{adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::pipeline::{DatasetManifest, Source};
use crate::rng::{self, Domain};

/// Unit-norm embedding plus the norm it had before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub pre_norm: f64,
}

impl Embedding {
    /// Normalizes `raw`; a zero vector is degenerate.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        let pre_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(pre_norm > 0.0 && pre_norm.is_finite()) {
            return Err(Error::DegenerateData(format!("embedding norm {pre_norm}")));
        }
        Ok(Self { vector: raw.iter().map(|v| v / pre_norm).collect(), pre_norm })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub resolution: usize,
    pub channels: [usize; 4],
    pub groups: usize,
    pub embed_dim: usize,
    /// Temperature of the cosine-softmax head.
    pub logit_scale: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub base_lr: f64,
    pub lr_min: f64,
    pub num_quality: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            channels: [8, 16, 32, 64],
            groups: 4,
            embed_dim: 64,
            logit_scale: 16.0,
            batch_size: 32,
            steps: 300,
            base_lr: 3e-3,
            lr_min: 1e-5,
            num_quality: 3,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 || self.resolution % 16 != 0 {
            return Err(Error::invalid("matcher resolution must be a positive multiple of 16"));
        }
        if self.groups == 0 || self.channels.iter().any(|c| *c == 0 || c % self.groups != 0) {
            return Err(Error::invalid("matcher channels must be positive multiples of groups"));
        }
        if self.embed_dim == 0 || self.batch_size == 0 || self.steps == 0 || self.num_quality < 2 {
            return Err(Error::invalid("embed_dim, batch_size and steps must be >= 1, num_quality >= 2"));
        }
        if !(self.base_lr > 0.0 && self.logit_scale > 0.0) {
            return Err(Error::invalid("base_lr and logit_scale must be positive"));
        }
        Ok(())
    }

    fn layout(&self, classes: usize) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = 1;
        for (i, &c) in self.channels.iter().enumerate() {
            out.push((format!("b{i}.conv.w"), vec![c, cin, 3, 3]));
            out.push((format!("b{i}.conv.b"), vec![c]));
            out.push((format!("b{i}.gn.g"), vec![c]));
            out.push((format!("b{i}.gn.b"), vec![c]));
            cin = c;
        }
        let side = self.resolution / 16;
        out.push(("emb.w".into(), vec![self.embed_dim, cin * side * side]));
        out.push(("emb.b".into(), vec![self.embed_dim]));
        out.push(("head.w".into(), vec![classes, self.embed_dim]));
        out
    }
}

/// Conv trunk with a cosine-softmax identity head and quality calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherModel {
    pub cfg: MatcherConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<f32>>,
    pub classes: usize,
    /// Ascending pre-norm thresholds separating the quality buckets.
    pub thresholds: Option<Vec<f64>>,
    /// Classification accuracy on the training images after training.
    pub train_accuracy: f64,
}

const MATCHER_KIND: &str = "palmforge-matcher";

fn init_matcher(cfg: &MatcherConfig, classes: usize, seed: u64) -> Result<(Vec<String>, Vec<Tensor<f32>>)> {
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (i, (name, shape)) in cfg.layout(classes).into_iter().enumerate() {
        let mut r = rng::stream(seed, Domain::Matcher, 1, i as u64);
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if name.ends_with(".gn.g") {
            vec![1.0; n]
        } else if name.ends_with(".b") {
            vec![0.0; n]
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| (std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)) as f32).collect()
        };
        names.push(name);
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    Ok((names, tensors))
}

fn image_batch(images: &[&Image], res: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(images.len() * res * res);
    for img in images {
        if img.width() != res || img.height() != res {
            return Err(Error::invalid(format!("matcher input must be {res}x{res}")));
        }
        data.extend(img.pixels().iter().map(|v| 2.0 * v - 1.0));
    }
    Tensor::from_vec(&[images.len(), 1, res, res], data)
}

/// Trunk up to the raw (pre-normalization) embedding `[n, D]`.
fn build_trunk(g: &mut Graph<'_, f32>, cfg: &MatcherConfig, x: Tensor<f32>) -> Var {
    let mut h = g.input(x);
    for i in 0..4 {
        g.scope(&format!("b{i}"));
        let (w, b, gg, gb) = (g.param(4 * i), g.param(4 * i + 1), g.param(4 * i + 2), g.param(4 * i + 3));
        h = g.conv2d(h, w, Some(b));
        h = g.group_norm(h, gg, gb, cfg.groups);
        h = g.silu(h);
        h = g.avg_pool2(h);
    }
    g.scope("emb");
    let h = g.flatten(h);
    let (w, b) = (g.param(16), g.param(17));
    g.linear(h, w, b)
}

/// Images per forward pass when embedding.
const EMBED_CHUNK: usize = 64;

impl MatcherModel {
    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    pub fn embed(&self, img: &Image) -> Result<Embedding> {
        Ok(self.embed_all(std::slice::from_ref(img))?.remove(0))
    }

    pub fn embed_all(&self, images: &[Image]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EMBED_CHUNK) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let x = image_batch(&refs, self.cfg.resolution)?;
            let mut g = Graph::new(&self.tensors);
            let e = build_trunk(&mut g, &self.cfg, x);
            if let Some(layer) = g.first_non_finite() {
                return Err(Error::NumericalFailure { location: format!("matcher {layer}"), detail: "non-finite activation".into() });
            }
            for row in g.value(e).data().chunks(self.cfg.embed_dim) {
                let raw: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                out.push(Embedding::from_raw(&raw)?);
            }
        }
        Ok(out)
    }

    /// Quality token of an image from its pre-normalization embedding norm.
    pub fn quality_of_norm(&self, pre_norm: f64) -> Result<usize> {
        let th = self.thresholds.as_ref().ok_or(Error::NotCalibrated)?;
        Ok(th.iter().filter(|t| pre_norm >= **t).count())
    }

    /// Quantile thresholds splitting `norms` into `num_quality` equal bins.
    pub fn calibrate(&mut self, norms: &[f64]) -> Result<()> {
        let q = self.cfg.num_quality;
        if norms.len() < q {
            return Err(Error::InsufficientData(format!("calibration needs at least {q} images")));
        }
        let mut sorted = norms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let th: Vec<f64> = (1..q).map(|k| sorted[k * sorted.len() / q]).collect();
        if th.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateData("quality thresholds are not strictly increasing".into()));
        }
        self.thresholds = Some(th);
        Ok(())
    }

    /// Head predictions (argmax of cosine logits) for a set of images.
    pub fn classify(&self, images: &[Image]) -> Result<Vec<usize>> {
        let emb = self.embed_all(images)?;
        let d = self.cfg.embed_dim;
        let head = self.tensors.last().expect("head").data();
        let rows: Vec<Vec<f64>> = head
            .chunks(d)
            .map(|r| {
                let n = r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
                r.iter().map(|v| *v as f64 / n).collect()
            })
            .collect();
        Ok(emb
            .iter()
            .map(|e| {
                let scores = rows.iter().map(|r| r.iter().zip(&e.vector).map(|(a, b)| a * b).sum::<f64>());
                scores.enumerate().fold((0, f64::NEG_INFINITY), |best, (i, s)| if s > best.1 { (i, s) } else { best }).0
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({
            "kind": MATCHER_KIND,
            "config": self.cfg,
            "classes": self.classes,
            "thresholds": self.thresholds,
            "train_accuracy": self.train_accuracy,
        });
        let refs: Vec<(String, &Tensor<f32>)> = self.names.iter().cloned().zip(self.tensors.iter()).collect();
        save_checkpoint(path, &meta, &refs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        if ck.meta.get("kind").and_then(|k| k.as_str()) != Some(MATCHER_KIND) {
            return Err(Error::Format("not a matcher checkpoint".into()));
        }
        let cfg: MatcherConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let classes: usize = serde_json::from_value(ck.meta["classes"].clone())?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in cfg.layout(classes) {
            let t = ck.tensor(&name).ok_or_else(|| Error::Format(format!("matcher checkpoint lacks {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            names.push(name);
            tensors.push(t.clone());
        }
        Ok(Self {
            cfg,
            names,
            tensors,
            classes,
            thresholds: serde_json::from_value(ck.meta["thresholds"].clone())?,
            train_accuracy: serde_json::from_value(ck.meta["train_accuracy"].clone())?,
        })
    }
}

/// Trains on in-memory images with class labels in `0..classes`, then
/// calibrates quality thresholds on the same images.
pub fn train_matcher_on(images: &[Image], labels: &[usize], cfg: &MatcherConfig, seed: u64) -> Result<MatcherModel> {
    cfg.validate()?;
    if images.len() != labels.len() {
        return Err(Error::invalid("one label per image is required"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut per_class = vec![0usize; classes];
    for &l in labels {
        per_class[l] += 1;
    }
    if classes < 2 || per_class.iter().filter(|c| **c > 0).count() < 2 {
        return Err(Error::invalid("matcher training needs at least two identities"));
    }
    if per_class.iter().any(|c| *c == 1) {
        return Err(Error::invalid("every identity needs at least two images"));
    }
    let (names, mut tensors) = init_matcher(cfg, classes, seed)?;
    let mut adam = AdamState::new(AdamConfig::new(cfg.base_lr, cfg.steps, cfg.lr_min), &tensors);
    let mut r = rng::stream(seed, Domain::Matcher, 0, 0);
    let head = tensors.len() - 1;
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| r.gen_range(0..images.len())).collect();
        let batch: Vec<&Image> = idx.iter().map(|&i| &images[i]).collect();
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let x = image_batch(&batch, cfg.resolution)?;
        let mut g = Graph::new(&tensors);
        let e = build_trunk(&mut g, cfg, x);
        g.scope("head");
        let e = g.l2_normalize(e);
        let hw = g.param(head);
        let hw = g.l2_normalize(hw);
        let logits = g.matmul_t(e, hw);
        let logits = g.scale(logits, cfg.logit_scale as f32);
        let loss = g.softmax_ce(logits, &y);
        let lv = g.value(loss).data()[0];
        if !lv.is_finite() {
            return Err(Error::NumericalFailure { location: format!("matcher step {step}"), detail: format!("loss {lv}") });
        }
        let grads = g.backward(loss)?;
        drop(g);
        adam_step(&mut tensors, &grads, &mut adam)?;
    }
    let mut model = MatcherModel { cfg: cfg.clone(), names, tensors, classes, thresholds: None, train_accuracy: 0.0 };
    let pred = model.classify(images)?;
    model.train_accuracy = pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64;
    let norms: Vec<f64> = model.embed_all(images)?.iter().map(|e| e.pre_norm).collect();
    model.calibrate(&norms)?;
    Ok(model)
}

/// Identity key that keeps real and synthetic id spaces apart.
pub fn identity_key(source: Source, id: u64) -> (bool, u64) {
    (source != Source::RealAnalog, id)
}

/// Loads a manifest's images and dense class labels (ordered by identity
/// key).
pub fn manifest_images(manifest: &DatasetManifest, res: usize) -> Result<(Vec<Image>, Vec<usize>)> {
    let mut keys = BTreeMap::new();
    for r in &manifest.records {
        let n = keys.len();
        keys.entry(identity_key(r.source, r.identity_id)).or_insert(n);
    }
    let order: BTreeMap<_, usize> = keys.keys().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut images = Vec::with_capacity(manifest.records.len());
    let mut labels = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        images.push(manifest.load_image(r, res)?);
        labels.push(order[&identity_key(r.source, r.identity_id)]);
    }
    Ok((images, labels))
}

pub fn train_matcher(manifest: &DatasetManifest, cfg: &MatcherConfig, seed: u64) -> Result<MatcherModel> {
    let (images, labels) = manifest_images(manifest, cfg.resolution)?;
    train_matcher_on(&images, &labels, cfg, seed)
}

pub fn match_score(a: &Embedding, b: &Embedding) -> f64 {
    a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}
