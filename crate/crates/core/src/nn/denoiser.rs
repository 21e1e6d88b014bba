use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Graph, Scalar, Tensor, Var};
use crate::diffusion::{make_schedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Shape of the U-Net denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub resolution: usize,
    /// Widths at full, half and quarter resolution.
    pub channels: [usize; 3],
    pub groups: usize,
    /// Length of the sinusoidal timestep encoding.
    pub time_dim: usize,
    /// Width of the timestep/quality embedding fed to every block.
    pub emb_dim: usize,
    pub num_quality: usize,
    pub timesteps: usize,
    /// Stage-two variant with a line-map control branch.
    pub control: bool,
    /// Schedule the skip coefficients are taken from.
    pub schedule: ScheduleKind,
    /// Data scale σ of the fixed input skip: the network output is added to
    /// `√(1−ᾱ_t)/(ᾱ_t·σ² + 1 − ᾱ_t) · x_t`, the noise estimate that is exact
    /// for N(0, σ²) data. `None` leaves the network output as is.
    pub skip_sigma: Option<f64>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            channels: [32, 64, 128],
            groups: 8,
            time_dim: 64,
            emb_dim: 64,
            num_quality: 3,
            timesteps: 200,
            control: false,
            schedule: ScheduleKind::Linear,
            skip_sigma: Some(0.5),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.iter().any(|&c| c == 0) || self.groups == 0 {
            return Err(Error::invalid("channel and group counts must be positive"));
        }
        if self.channels.iter().any(|&c| c % self.groups != 0) {
            return Err(Error::invalid(format!("groups {} must divide every width {:?}", self.groups, self.channels)));
        }
        if self.resolution % 4 != 0 || self.resolution == 0 {
            return Err(Error::invalid("resolution must be a positive multiple of 4"));
        }
        if self.time_dim % 2 != 0 || self.time_dim == 0 || self.emb_dim == 0 {
            return Err(Error::invalid("time_dim must be even and emb_dim positive"));
        }
        if self.num_quality == 0 || self.timesteps == 0 {
            return Err(Error::invalid("num_quality and timesteps must be positive"));
        }
        if self.skip_sigma.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("skip_sigma must be positive"));
        }
        Ok(())
    }

    /// Ordered `(name, shape)` list of every parameter tensor.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let [c0, c1, c2] = self.channels;
        let e = self.emb_dim;
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: &str, shape: &[usize]| out.push((name.to_string(), shape.to_vec()));
        push("time.l1.w", &[e, self.time_dim]);
        push("time.l1.b", &[e]);
        push("time.l2.w", &[e, e]);
        push("time.l2.b", &[e]);
        push("quality.table", &[self.num_quality, e]);
        push("in_conv.w", &[c0, 1, 3, 3]);
        push("in_conv.b", &[c0]);
        for (name, cin, cout) in [("down1", c0, c0), ("down2", c0, c1), ("mid", c1, c2), ("up2", c2 + c1, c1), ("up1", c1 + c0, c0)] {
            push(&format!("{name}.gn1.g"), &[cin]);
            push(&format!("{name}.gn1.b"), &[cin]);
            push(&format!("{name}.conv1.w"), &[cout, cin, 3, 3]);
            push(&format!("{name}.conv1.b"), &[cout]);
            push(&format!("{name}.temb.w"), &[cout, e]);
            push(&format!("{name}.temb.b"), &[cout]);
            push(&format!("{name}.gn2.g"), &[cout]);
            push(&format!("{name}.gn2.b"), &[cout]);
            push(&format!("{name}.conv2.w"), &[cout, cout, 3, 3]);
            push(&format!("{name}.conv2.b"), &[cout]);
            if cin != cout {
                push(&format!("{name}.skip.w"), &[cout, cin, 1, 1]);
                push(&format!("{name}.skip.b"), &[cout]);
            }
        }
        push("out.gn.g", &[c0]);
        push("out.gn.b", &[c0]);
        push("out.conv.w", &[1, c0, 3, 3]);
        push("out.conv.b", &[1]);
        if self.control {
            push("ctrl.conv1.w", &[c0, 1, 3, 3]);
            push("ctrl.conv1.b", &[c0]);
            push("ctrl.conv2.w", &[c0, c0, 3, 3]);
            push("ctrl.conv2.b", &[c0]);
            push("ctrl.conv3.w", &[c0, c0, 3, 3]);
            push("ctrl.conv3.b", &[c0]);
            push("ctrl.proj1.w", &[c0, c0, 1, 1]);
            push("ctrl.proj1.b", &[c0]);
            push("ctrl.proj2.w", &[c0, c0, 1, 1]);
            push("ctrl.proj2.b", &[c0]);
        }
        out
    }
}

/// True for the zero-initialized fusion projections of the control branch.
pub fn is_fusion_param(name: &str) -> bool {
    name.starts_with("ctrl.proj")
}

/// Named parameter tensors of a denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<S> {
    pub cfg: DenoiserConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> DenoiserParams<S> {
    pub fn from_tensors(cfg: DenoiserConfig, names: Vec<String>, tensors: Vec<Tensor<S>>) -> Result<Self> {
        cfg.validate()?;
        let layout = cfg.layout();
        if layout.len() != names.len() || names.len() != tensors.len() {
            return Err(Error::Format(format!("expected {} tensors, got {}", layout.len(), tensors.len())));
        }
        for ((ln, ls), (n, t)) in layout.iter().zip(names.iter().zip(&tensors)) {
            if ln != n || ls.as_slice() != t.shape() {
                return Err(Error::Format(format!("tensor {n} {:?} does not match layout {ln} {ls:?}", t.shape())));
            }
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self { cfg, names, tensors, index })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> DenoiserParams<T> {
        DenoiserParams { cfg: self.cfg.clone(), names: self.names.clone(), tensors: self.tensors.iter().map(|t| t.cast()).collect(), index: self.index.clone() }
    }

    /// Stage-two parameters that reuse every backbone tensor of `self` and add
    /// a freshly initialized control branch (fusion projections at zero).
    pub fn with_control(&self, seed: u64) -> Result<Self> {
        if self.cfg.control {
            return Err(Error::invalid("model already has a control branch"));
        }
        let cfg = DenoiserConfig { control: true, ..self.cfg.clone() };
        let fresh = init_denoiser::<S>(&cfg, seed)?;
        let tensors = fresh
            .names
            .iter()
            .zip(fresh.tensors.iter())
            .map(|(n, t)| self.get(n).cloned().unwrap_or_else(|| t.clone()))
            .collect();
        Self::from_tensors(cfg, fresh.names, tensors)
    }
}

/// He-style initialization (normal, variance 2/fan_in) for conv and linear
/// weights, unit group-norm gains, zero biases and zero fusion projections.
pub fn init_denoiser<S: Scalar>(cfg: &DenoiserConfig, seed: u64) -> Result<DenoiserParams<S>> {
    cfg.validate()?;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (i, (name, shape)) in cfg.layout().into_iter().enumerate() {
        let mut r = rng::stream(seed, Domain::General, 0x4e4e, i as u64);
        let n: usize = shape.iter().product();
        let data: Vec<S> = if is_fusion_param(&name) || (name.ends_with(".b") && !name.contains(".gn")) {
            vec![S::zero(); n]
        } else if name.contains(".gn") && name.ends_with(".g") {
            vec![S::one(); n]
        } else if name.contains(".gn") {
            vec![S::zero(); n]
        } else if name == "quality.table" {
            (0..n).map(|_| S::lit(StandardNormal.sample(&mut r))).collect()
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| S::lit(std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r))).collect()
        };
        names.push(name);
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    DenoiserParams::from_tensors(cfg.clone(), names, tensors)
}

/// Sinusoidal encoding of integer timesteps, `[n, dim]`.
pub fn timestep_encoding<S: Scalar>(t: &[usize], dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| ti as f64 * f).collect();
        data.extend(args.iter().map(|a| S::lit(a.sin())));
        data.extend(args.iter().map(|a| S::lit(a.cos())));
    }
    Tensor::from_vec(&[t.len(), dim], data).expect("consistent encoding")
}

/// Builds the denoiser into `g` (whose parameters must be `p.tensors`) and
/// returns the predicted-noise node.
pub fn build_denoiser<S: Scalar>(g: &mut Graph<'_, S>, p: &DenoiserParams<S>, x_t: &Tensor<S>, t: &[usize], quality: &[usize], control: Option<&Tensor<S>>) -> Result<Var> {
    let cfg = &p.cfg;
    let r = cfg.resolution;
    let n = x_t.shape().first().copied().unwrap_or(0);
    if x_t.shape() != [n, 1, r, r] || n == 0 {
        return Err(Error::invalid(format!("x_t must be [n, 1, {r}, {r}] with n ≥ 1, got {:?}", x_t.shape())));
    }
    if t.len() != n || quality.len() != n {
        return Err(Error::invalid("one timestep and one quality token per batch item"));
    }
    if let Some(&bad) = t.iter().find(|&&ti| ti >= cfg.timesteps) {
        return Err(Error::invalid(format!("timestep {bad} outside [0, {})", cfg.timesteps)));
    }
    if let Some(&bad) = quality.iter().find(|&&q| q >= cfg.num_quality) {
        return Err(Error::invalid(format!("quality token {bad} outside [0, {})", cfg.num_quality)));
    }
    match (cfg.control, control) {
        (true, None) => return Err(Error::invalid("stage-two model needs a control input")),
        (false, Some(_)) => return Err(Error::invalid("stage-one model takes no control input")),
        (true, Some(c)) if c.shape() != x_t.shape() => return Err(Error::invalid("control must match x_t in shape")),
        _ => {}
    }
    let pv = |g: &mut Graph<'_, S>, name: &str| -> Var { g.param(p.index_of(name).unwrap_or_else(|| panic!("missing parameter {name}"))) };

    g.scope("time");
    let enc = g.input(timestep_encoding(t, cfg.time_dim));
    let (w1, b1, w2, b2) = (pv(g, "time.l1.w"), pv(g, "time.l1.b"), pv(g, "time.l2.w"), pv(g, "time.l2.b"));
    let h = g.linear(enc, w1, b1);
    let h = g.silu(h);
    let temb = g.linear(h, w2, b2);
    let table = pv(g, "quality.table");
    let qemb = g.embedding(table, quality);
    let emb = g.add(temb, qemb);
    let emb = g.silu(emb);

    g.scope("in_conv");
    let x = g.input(x_t.clone());
    let (w, b) = (pv(g, "in_conv.w"), pv(g, "in_conv.b"));
    let mut h0 = g.conv2d(x, w, Some(b));

    let mut ctrl_half = None;
    if let Some(c) = control {
        g.scope("ctrl");
        let mut f = g.input(c.clone());
        for l in ["ctrl.conv1", "ctrl.conv2", "ctrl.conv3"] {
            let (w, b) = (pv(g, &format!("{l}.w")), pv(g, &format!("{l}.b")));
            f = g.conv2d(f, w, Some(b));
            f = g.silu(f);
        }
        let (w, b) = (pv(g, "ctrl.proj1.w"), pv(g, "ctrl.proj1.b"));
        let z1 = g.conv2d(f, w, Some(b));
        h0 = g.add(h0, z1);
        let fh = g.avg_pool2(f);
        let (w, b) = (pv(g, "ctrl.proj2.w"), pv(g, "ctrl.proj2.b"));
        ctrl_half = Some(g.conv2d(fh, w, Some(b)));
    }

    let s1 = res_block(g, p, "down1", h0, emb)?;
    let mut p1 = g.avg_pool2(s1);
    if let Some(z2) = ctrl_half {
        p1 = g.add(p1, z2);
    }
    let s2 = res_block(g, p, "down2", p1, emb)?;
    let p2 = g.avg_pool2(s2);
    let m = res_block(g, p, "mid", p2, emb)?;
    g.scope("up2");
    let u = g.upsample2(m);
    let u = g.concat(u, s2);
    let u2 = res_block(g, p, "up2", u, emb)?;
    g.scope("up1");
    let u = g.upsample2(u2);
    let u = g.concat(u, s1);
    let u1 = res_block(g, p, "up1", u, emb)?;

    g.scope("out");
    let (gg, gb) = (pv(g, "out.gn.g"), pv(g, "out.gn.b"));
    let o = g.group_norm(u1, gg, gb, cfg.groups);
    let o = g.silu(o);
    let (w, b) = (pv(g, "out.conv.w"), pv(g, "out.conv.b"));
    let out = g.conv2d(o, w, Some(b));
    match cfg.skip_sigma {
        None => Ok(out),
        Some(sigma) => {
            let sched = make_schedule(cfg.schedule, cfg.timesteps)?;
            let mut skip = x_t.clone();
            for (plane, &ti) in skip.data_mut().chunks_mut(r * r).zip(t) {
                let ab = sched.alpha_bars[ti];
                let c = S::lit((1.0 - ab).sqrt() / (ab * sigma * sigma + 1.0 - ab));
                plane.iter_mut().for_each(|v| *v = *v * c);
            }
            g.scope("skip");
            let skip = g.input(skip);
            Ok(g.add(out, skip))
        }
    }
}

fn res_block<S: Scalar>(g: &mut Graph<'_, S>, p: &DenoiserParams<S>, name: &str, x: Var, emb: Var) -> Result<Var> {
    let groups = p.cfg.groups;
    let idx = |s: &str| p.index_of(&format!("{name}.{s}")).ok_or_else(|| Error::Format(format!("missing {name}.{s}")));
    g.scope(name);
    let (g1, b1) = (g.param(idx("gn1.g")?), g.param(idx("gn1.b")?));
    let h = g.group_norm(x, g1, b1, groups);
    let h = g.silu(h);
    let (w, b) = (g.param(idx("conv1.w")?), g.param(idx("conv1.b")?));
    let h = g.conv2d(h, w, Some(b));
    let (tw, tb) = (g.param(idx("temb.w")?), g.param(idx("temb.b")?));
    let tproj = g.linear(emb, tw, tb);
    let h = g.add_channels(h, tproj);
    let (g2, b2) = (g.param(idx("gn2.g")?), g.param(idx("gn2.b")?));
    let h = g.group_norm(h, g2, b2, groups);
    let h = g.silu(h);
    let (w, b) = (g.param(idx("conv2.w")?), g.param(idx("conv2.b")?));
    let h = g.conv2d(h, w, Some(b));
    let skip = match (idx("skip.w"), idx("skip.b")) {
        (Ok(w), Ok(b)) => {
            let (w, b) = (g.param(w), g.param(b));
            g.conv2d(x, w, Some(b))
        }
        _ => x,
    };
    Ok(g.add(h, skip))
}

/// Predicted noise for a batch `[n, 1, r, r]`.
pub fn denoise_forward<S: Scalar>(p: &DenoiserParams<S>, x_t: &Tensor<S>, t: &[usize], quality: &[usize], control: Option<&Tensor<S>>) -> Result<Tensor<S>> {
    let mut g = Graph::new(&p.tensors);
    let out = build_denoiser(&mut g, p, x_t, t, quality, control)?;
    if let Some(layer) = g.first_non_finite() {
        return Err(Error::NumericalFailure { location: layer, detail: "non-finite activation".into() });
    }
    Ok(g.value(out).clone())
}

/// One training batch: noised inputs, the noise that produced them and the
/// conditioning.
#[derive(Debug, Clone)]
pub struct TrainBatch<S> {
    pub x_t: Tensor<S>,
    pub eps: Tensor<S>,
    pub t: Vec<usize>,
    pub quality: Vec<usize>,
    pub control: Option<Tensor<S>>,
}

/// Mean squared noise-prediction error and its exact gradient with respect
/// to every parameter tensor.
pub fn loss_and_grads<S: Scalar>(p: &DenoiserParams<S>, batch: &TrainBatch<S>) -> Result<(f64, Vec<Tensor<S>>)> {
    if batch.eps.shape() != batch.x_t.shape() {
        return Err(Error::invalid("eps must match x_t in shape"));
    }
    let mut g = Graph::new(&p.tensors);
    let pred = build_denoiser(&mut g, p, &batch.x_t, &batch.t, &batch.quality, batch.control.as_ref())?;
    g.scope("loss");
    let loss = g.mse(pred, batch.eps.clone());
    if let Some(layer) = g.first_non_finite() {
        return Err(Error::NumericalFailure { location: layer, detail: "non-finite activation".into() });
    }
    let value = g.value(loss).data()[0].f64();
    let grads = g.backward(loss)?;
    Ok((value, grads))
}
