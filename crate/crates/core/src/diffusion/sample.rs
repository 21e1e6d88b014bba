use rand::{Rng as _, RngCore};
use rand_distr::StandardNormal;

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::imagecore::{BinaryImage, Image};
use crate::nn::{denoise_forward, DenoiserParams, Tensor};
use crate::rng::{self, Domain, Rng};

/// One image to generate. The noise stream is derived from `seed` alone, so
/// a request renders identically whatever batch it shares.
#[derive(Debug, Clone)]
pub struct SampleRequest {
    pub quality: usize,
    pub control: Option<BinaryImage>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub images: Vec<Image>,
    /// Denoiser evaluations spent on each image.
    pub evaluations: Vec<usize>,
}

/// Requests evaluated together in one forward pass.
pub const SAMPLE_CHUNK: usize = 16;

/// Seed of the `index`-th image of a `sample` call.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    rng::stream(seed, Domain::Sampling, 1, index).next_u64()
}

/// `n` images sharing a quality token and (optional) control map; image `i`
/// uses the noise stream of [`sample_seed`]`(seed, i)`.
pub fn sample(
    model: &DenoiserParams<f32>,
    sched: &NoiseSchedule,
    quality: usize,
    control: Option<&BinaryImage>,
    seed: u64,
    n: usize,
) -> Result<Vec<Image>> {
    let reqs: Vec<SampleRequest> =
        (0..n as u64).map(|i| SampleRequest { quality, control: control.cloned(), seed: sample_seed(seed, i) }).collect();
    Ok(sample_requests(model, sched, &reqs)?.images)
}

/// Ancestral sampling of every request, batched in chunks.
pub fn sample_requests(model: &DenoiserParams<f32>, sched: &NoiseSchedule, reqs: &[SampleRequest]) -> Result<SampleOutput> {
    let cfg = &model.cfg;
    if sched.steps() != cfg.timesteps {
        return Err(Error::invalid(format!("schedule has {} steps, model expects {}", sched.steps(), cfg.timesteps)));
    }
    if cfg.skip_sigma.is_some() && sched.kind != cfg.schedule {
        return Err(Error::invalid(format!("model was trained with the {:?} schedule, got {:?}", cfg.schedule, sched.kind)));
    }
    for r in reqs {
        if r.control.is_some() != cfg.control {
            return Err(Error::invalid(if cfg.control {
                "stage-two model needs a control map"
            } else {
                "stage-one model takes no control map"
            }));
        }
        if r.quality >= cfg.num_quality {
            return Err(Error::invalid(format!("quality token {} outside [0, {})", r.quality, cfg.num_quality)));
        }
        if let Some(c) = &r.control {
            if c.width() != cfg.resolution || c.height() != cfg.resolution {
                return Err(Error::invalid(format!("control map must be {0}x{0}", cfg.resolution)));
            }
        }
    }
    let mut out = SampleOutput { images: Vec::with_capacity(reqs.len()), evaluations: Vec::with_capacity(reqs.len()) };
    for chunk in reqs.chunks(SAMPLE_CHUNK) {
        let (imgs, evals) = sample_chunk(model, sched, chunk)?;
        out.images.extend(imgs);
        out.evaluations.extend(evals);
    }
    Ok(out)
}

fn sample_chunk(model: &DenoiserParams<f32>, sched: &NoiseSchedule, reqs: &[SampleRequest]) -> Result<(Vec<Image>, Vec<usize>)> {
    let res = model.cfg.resolution;
    let plane = res * res;
    let b = reqs.len();
    let shape = [b, 1, res, res];
    let mut rngs: Vec<Rng> = reqs.iter().map(|r| rng::stream(r.seed, Domain::Sampling, 0, 0)).collect();
    let mut x: Vec<f32> = Vec::with_capacity(b * plane);
    for r in &mut rngs {
        x.extend((0..plane).map(|_| r.sample::<f32, _>(StandardNormal)));
    }
    let quality: Vec<usize> = reqs.iter().map(|r| r.quality).collect();
    let control = if model.cfg.control {
        let data = reqs.iter().flat_map(|r| r.control.as_ref().expect("checked").bits().iter().map(|&v| v as f32)).collect();
        Some(Tensor::from_vec(&shape, data)?)
    } else {
        None
    };
    let mut evals = vec![0usize; b];
    let mut xt = Tensor::from_vec(&shape, x)?;
    for t in (0..sched.steps()).rev() {
        let eps = denoise_forward(model, &xt, &vec![t; b], &quality, control.as_ref())
            .map_err(|e| match e {
                Error::NumericalFailure { location, detail } => Error::NumericalFailure { location: format!("sampling t={t}, {location}"), detail },
                other => other,
            })?;
        for e in &mut evals {
            *e += 1;
        }
        let (alpha, beta) = (sched.alphas[t], sched.betas[t]);
        let c1 = 1.0 / alpha.sqrt();
        let c2 = beta / (1.0 - sched.alpha_bars[t]).sqrt();
        let sigma = beta.sqrt();
        let xd = xt.data_mut();
        for (k, r) in rngs.iter_mut().enumerate() {
            let span = k * plane..(k + 1) * plane;
            for (v, &e) in xd[span.clone()].iter_mut().zip(&eps.data()[span]) {
                let mean = c1 * (*v as f64 - c2 * e as f64);
                let z = if t > 0 { r.sample::<f64, _>(StandardNormal) } else { 0.0 };
                *v = (mean + sigma * z) as f32;
            }
        }
    }
    let images = (0..b)
        .map(|k| {
            let px = xt.data()[k * plane..(k + 1) * plane].iter().map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect();
            Image::from_pixels(res, res, px)
        })
        .collect::<Result<_>>()?;
    Ok((images, evals))
}
