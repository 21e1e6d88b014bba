use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::Image;

pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Linear,
    #[serde(alias = "cosine-alpha-bar")]
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" | "cosine-alpha-bar" => Ok(Self::Cosine),
            other => Err(Error::invalid(format!("unknown schedule kind '{other}'"))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        })
    }
}

/// β, α = 1 − β and ᾱ (running product of α). Index `t` is the `t`-th
/// noising step, so `alpha_bars[0] = 1 − betas[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

/// `f(t)/f(0)` for the cosine schedule with `f(t) = cos²(((t/T)+s)/(1+s)·π/2)`.
pub fn cosine_alpha_bar(t: f64, steps: usize) -> f64 {
    let f = |t: f64| (((t / steps as f64) + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2).cos().powi(2);
    f(t) / f(0.0)
}

pub fn make_schedule(kind: ScheduleKind, steps: usize) -> Result<NoiseSchedule> {
    if steps < 10 {
        return Err(Error::invalid(format!("schedule needs T >= 10, got {steps}")));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            let scale = 1000.0 / steps as f64;
            let (lo, hi) = (1e-4 * scale, 0.02 * scale);
            (0..steps).map(|i| (lo + (hi - lo) * i as f64 / (steps - 1) as f64).min(MAX_BETA)).collect()
        }
        ScheduleKind::Cosine => (0..steps)
            .map(|i| {
                let prev = cosine_alpha_bar(i as f64, steps);
                let next = cosine_alpha_bar((i + 1) as f64, steps);
                (1.0 - next / prev).min(MAX_BETA)
            })
            .collect(),
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    let sched = NoiseSchedule { kind, betas, alphas, alpha_bars };
    sched.check()?;
    Ok(sched)
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self) -> Result<()> {
        let fail = |d: String| Err(Error::NumericalFailure { location: format!("{} schedule", self.kind), detail: d });
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return fail(format!("beta {b} outside (0, 1)"));
        }
        if self.alpha_bars.windows(2).any(|w| w[1] >= w[0]) {
            return fail("alpha_bar not strictly decreasing".into());
        }
        let last = *self.alpha_bars.last().unwrap_or(&1.0);
        if last >= 0.01 {
            return fail(format!("terminal alpha_bar {last} >= 0.01"));
        }
        Ok(())
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::invalid(format!("timestep {t} outside [0, {})", self.steps())));
        }
        Ok(())
    }

    /// `(√ᾱ_t, √(1 − ᾱ_t))`.
    pub fn noise_coefs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bars[t];
        (ab.sqrt(), (1.0 - ab).sqrt())
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·eps`, elementwise.
pub fn forward_noise(x0: &Image, t: usize, eps: &Image, sched: &NoiseSchedule) -> Result<Image> {
    sched.check_t(t)?;
    if !x0.same_dims(eps) {
        return Err(Error::invalid("eps must have the shape of x0"));
    }
    let mut out = x0.clone();
    noise_into(out.pixels_mut(), eps.pixels(), t, sched);
    Ok(out)
}

/// In-place form of [`forward_noise`] on raw pixel buffers.
pub(crate) fn noise_into(x: &mut [f32], eps: &[f32], t: usize, sched: &NoiseSchedule) {
    let (a, b) = sched.noise_coefs(t);
    for (v, &e) in x.iter_mut().zip(eps) {
        *v = (a * *v as f64 + b * e as f64) as f32;
    }
}
