#![allow(dead_code)]

use palmforge::crease::{composite_texture, render_strokes, sample_corpus, CreaseConfig, TextureConfig};
use palmforge::geometry::{symmetric_error, Correspondence, Homography};
use palmforge::lineextract::{extract_lines, LineExtractConfig};
use palmforge::nn::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;


pub fn gradcheck_config() -> DenoiserConfig {
    DenoiserConfig { resolution: 8, channels: [8, 16, 16], groups: 4, time_dim: 16, emb_dim: 16, num_quality: 3, timesteps: 10, control: true, ..Default::default() }
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Parameters with every tensor (including the fusion projections) perturbed
/// so that all layers carry gradient.
pub fn perturbed_params(cfg: &DenoiserConfig, seed: u64) -> DenoiserParams<f64> {
    let mut p = init_denoiser::<f64>(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for t in &mut p.tensors {
        let noise = randn(&mut rng, t.shape(), 0.2);
        t.add_assign(&noise);
    }
    p
}

pub fn gradcheck_batch(cfg: &DenoiserConfig, seed: u64) -> TrainBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.resolution;
    let control = Tensor::from_vec(&[2, 1, r, r], (0..2 * r * r).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect()).unwrap();
    TrainBatch { x_t: randn(&mut rng, &[2, 1, r, r], 1.0), eps: randn(&mut rng, &[2, 1, r, r], 1.0), t: vec![3, 7], quality: vec![0, 2], control: Some(control) }
}

/// Largest relative error between analytic and central-difference gradients
/// over `count` parameters, at least one from every tensor.
pub fn max_gradcheck_error(count: usize, seed: u64) -> (f64, usize) {
    let cfg = gradcheck_config();
    let mut p = perturbed_params(&cfg, seed);
    let batch = gradcheck_batch(&cfg, seed + 1);
    let (_, grads) = loss_and_grads(&p, &batch).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let mut picks: Vec<(usize, usize)> = (0..p.tensors.len()).map(|i| (i, rng.gen_range(0..p.tensors[i].len()))).collect();
    while picks.len() < count {
        let i = rng.gen_range(0..p.tensors.len());
        picks.push((i, rng.gen_range(0..p.tensors[i].len())));
    }
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for &(ti, j) in &picks {
        let orig = p.tensors[ti].data()[j];
        p.tensors[ti].data_mut()[j] = orig + h;
        let (lp, _) = loss_and_grads(&p, &batch).unwrap();
        p.tensors[ti].data_mut()[j] = orig - h;
        let (lm, _) = loss_and_grads(&p, &batch).unwrap();
        p.tensors[ti].data_mut()[j] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let analytic = grads[ti].data()[j];
        let denom = numeric.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max((numeric - analytic).abs() / denom);
    }
    (worst, picks.len())
}

pub fn planted_h(rng: &mut impl Rng, max_offset: f64) -> Homography {
    let mut offs = [(0.0, 0.0); 4];
    for o in &mut offs {
        *o = (rng.gen_range(-max_offset..=max_offset), rng.gen_range(-max_offset..=max_offset));
    }
    Homography::from_corner_offsets(64, 64, offs).unwrap()
}

/// `n_in` exact correspondences and `n_out` uniform outliers. Outliers
/// that happen to agree with `h` within `3 * inlier_px` are redrawn so
/// that the planted inlier set is unambiguous.
pub fn planted_pairs(
    rng: &mut impl Rng,
    h: &Homography,
    n_in: usize,
    n_out: usize,
    inlier_px: f64,
) -> (Vec<Correspondence>, Vec<bool>) {
    let inv = h.inverse().unwrap();
    let mut pairs = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..n_in {
        let s = (rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0));
        pairs.push((s, h.apply(s.0, s.1).unwrap()));
        truth.push(true);
    }
    while truth.len() < n_in + n_out {
        let c = ((rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0)), (rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0)));
        if symmetric_error(h, &inv, &c) > 3.0 * inlier_px {
            pairs.push(c);
            truth.push(false);
        }
    }
    // Interleave deterministically.
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    (order.iter().map(|&i| pairs[i]).collect(), order.iter().map(|&i| truth[i]).collect())
}

/// Coverage of the rasterizer's stroke support and false-positive rate
/// on pixels more than 3 px from any stroke edge.
pub fn fidelity(n: usize, seed: u64) -> (f64, f64) {
    let cfg = LineExtractConfig::default();
    let mut cov = 0.0;
    let mut fp = 0.0;
    for spec in sample_corpus(n, 0, seed, &CreaseConfig::default()).unwrap() {
        let r = render_strokes(&spec, 64, 64).unwrap();
        let img = composite_texture(&r.image, spec.seed, &TextureConfig::default()).unwrap();
        let lines = extract_lines(&img, &cfg).unwrap();
        let far = r.far_background(3.0);
        let (mut hit, mut sup, mut fpos, mut bg) = (0usize, 0usize, 0usize, 0usize);
        for i in 0..64 * 64 {
            let (x, y) = (i % 64, i / 64);
            if r.support.get(x, y) {
                sup += 1;
                hit += lines.get(x, y) as usize;
            }
            if far.get(x, y) {
                bg += 1;
                fpos += lines.get(x, y) as usize;
            }
        }
        cov += hit as f64 / sup as f64;
        fp += fpos as f64 / bg.max(1) as f64;
    }
    (cov / n as f64, fp / n as f64)
}

/// TAR@FAR by brute force: every observed score and +inf is tried as a
/// threshold, counting with plain loops.
pub fn tar_sweep(genuine: &[f64], imposter: &[f64], far: f64) -> (f64, f64) {
    let mut best = f64::INFINITY;
    for &t in genuine.iter().chain(imposter) {
        let fa = imposter.iter().filter(|&&s| s >= t).count() as f64 / imposter.len() as f64;
        if fa <= far && t < best {
            best = t;
        }
    }
    let tar = genuine.iter().filter(|&&s| s >= best).count() as f64 / genuine.len() as f64;
    (tar, best)
}

/// Random score lists with frequent ties.
pub fn random_scores(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let levels = rng.gen_range(2..200);
    let draw = |n: usize, shift: f64, rng: &mut dyn rand::RngCore| -> Vec<f64> {
        (0..n).map(|_| ((rand::Rng::gen_range(rng, 0..levels) as f64 / levels as f64 + shift).clamp(0.0, 1.0)) * 2.0 - 1.0).collect()
    };
    let ng = rng.gen_range(1..60);
    let ni = rng.gen_range(1..400);
    let shift = rng.gen_range(0.0..0.5);
    (draw(ng, shift, rng), draw(ni, 0.0, rng))
}
