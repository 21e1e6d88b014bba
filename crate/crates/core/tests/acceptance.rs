//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `PALMFORGE_ACCEPTANCE_QUICK=1` skips the two reference-training criteria.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use palmforge::diffusion::{forward_noise, make_schedule, smoothed_losses, ScheduleKind, Stage, TrainRunConfig, TrainState, TrainingSet};
use palmforge::eval::{tar_at_far, utility_experiment_on, LabeledImages, ScoreSet, TrainConfiguration, UtilityConfig, UtilityReport};
use palmforge::geometry::{estimate_homography_ransac, BankConfig, BankEntry, Homography, HomographyBank};
use palmforge::lineextract::extract_lines;
use palmforge::nn::{denoise_forward, init_denoiser, DenoiserConfig, Tensor};
use palmforge::pipeline::*;
use palmforge::Image;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradients() -> Outcome {
    let (err, n) = common::max_gradcheck_error(200, 11);
    outcome(err <= 1e-4, format!("{n} parameters, max relative error {err:.2e} (limit 1e-4)"))
}

fn forward_statistics() -> Outcome {
    let s = make_schedule(ScheduleKind::Linear, 200).unwrap();
    let t = s.steps() - 1;
    let x0 = Image::from_fn(64, 64, |x, y| ((x * 7 + y * 3) % 17) as f32 / 16.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10_000;
    let px = 64 * 64;
    let mut sum = vec![0f64; px];
    let mut sq = vec![0f64; px];
    for _ in 0..n {
        let eps = Image::from_fn(64, 64, |_, _| rng.sample(StandardNormal));
        let xt = forward_noise(&x0, t, &eps, &s).unwrap();
        for (i, &v) in xt.pixels().iter().enumerate() {
            sum[i] += v as f64;
            sq[i] += v as f64 * v as f64;
        }
    }
    let (a, b) = s.noise_coefs(t);
    let (mut worst_mean, mut worst_var) = (0f64, 0f64);
    for i in 0..px {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        worst_mean = worst_mean.max((mean - a * x0.pixels()[i] as f64).abs());
        worst_var = worst_var.max((var / (b * b) - 1.0).abs());
    }
    outcome(
        worst_mean <= 0.05 && worst_var <= 0.10,
        format!("{n} draws at t={t}, worst mean error {worst_mean:.4} (limit 0.05), worst variance error {:.2}% (limit 10%)", 100.0 * worst_var),
    )
}

fn schedules() -> Outcome {
    let mut bad = Vec::new();
    for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
        for steps in [50, 200, 1000] {
            let s = make_schedule(kind, steps).unwrap();
            let ok = s.alpha_bars.windows(2).all(|w| w[1] < w[0])
                && s.alpha_bars[steps - 1] < 0.01
                && s.betas.iter().all(|b| *b > 0.0 && *b < 1.0);
            if !ok {
                bad.push(format!("{kind}/{steps}"));
            }
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { "linear and cosine at T in {50, 200, 1000}".into() } else { format!("violations: {bad:?}") })
}

fn line_fidelity() -> Outcome {
    let (cov, fp) = common::fidelity(100, 31);
    outcome(cov >= 0.70 && fp <= 0.05, format!("100 renders, coverage {:.1}% (min 70%), far-background positives {:.2}% (max 5%)", 100.0 * cov, 100.0 * fp))
}

fn ransac() -> Outcome {
    let mut ok = 0;
    let mut worst = 0f64;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let h = common::planted_h(&mut rng, 5.4);
        assert!(h.corner_displacement(64, 64) <= 0.12 * 64.0);
        let (pairs, truth) = common::planted_pairs(&mut rng, &h, 20, 20, 1.5);
        let Ok(r) = estimate_homography_ransac(&pairs, 500, 1.5, trial) else { continue };
        let err = r.homography.max_abs_diff(&h);
        worst = worst.max(err);
        if r.inlier_mask == truth && err <= 1e-6 {
            ok += 1;
        }
    }
    outcome(ok == 100, format!("{ok}/100 trials exact, worst matrix error {worst:.1e} (limit 1e-6)"))
}

fn tar_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut agree = 0;
    for _ in 0..1000 {
        let (g, i) = common::random_scores(&mut rng);
        let far = [1e-4, 1e-3, 0.01, 0.05, 0.2, 0.5][rng.gen_range(0..6)];
        let r = tar_at_far(&ScoreSet { genuine: g.clone(), imposter: i.clone(), protocol_id: "all-pairs".into() }, far).unwrap();
        if (r.tar, r.threshold) == common::tar_sweep(&g, &i, far) {
            agree += 1;
        }
    }
    outcome(agree == 1000, format!("{agree}/1000 score sets identical to the exhaustive sweep"))
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let real = RealCorpusConfig { n_ids: 6, images_per_id: 3, seed: 4, ..RealCorpusConfig::default() };
    generate_real_corpus(&real, &dir.path().join("real-a")).unwrap();
    generate_real_corpus(&real, &dir.path().join("real-b")).unwrap();
    let real_same = tree_bytes(&dir.path().join("real-a")) == tree_bytes(&dir.path().join("real-b"));

    let model = DenoiserConfig { resolution: 32, channels: [4, 8, 8], groups: 4, time_dim: 8, emb_dim: 8, timesteps: 10, ..DenoiserConfig::default() };
    let s1 = init_denoiser::<f32>(&model, 3).unwrap();
    let s2 = s1.with_control(4).unwrap();
    let sched = make_schedule(ScheduleKind::Linear, 10).unwrap();
    let bank = HomographyBank {
        entries: vec![BankEntry { m: Homography::translation(1.0, 0.0), inliers: 12, mean_err: 0.0, src: "t".into() }],
        cfg: BankConfig::default(),
    };
    let models = CorpusModels { stage1: &s1, stage1_schedule: &sched, stage2: &s2, stage2_schedule: &sched, bank: &bank, matcher: None };
    let ccfg = CorpusConfig { n_ids: 3, renders_per_id: 2, seed: 5, ..CorpusConfig::default() };
    build_corpus(&ccfg, &models, &dir.path().join("syn-a")).unwrap();
    build_corpus(&ccfg, &models, &dir.path().join("syn-b")).unwrap();
    let synth_same = tree_bytes(&dir.path().join("syn-a")) == tree_bytes(&dir.path().join("syn-b"));

    let images: Vec<(Image, usize)> = real.captures().unwrap().into_iter().map(|c| (palmforge::imagecore::io::quantize(&c.image), 2)).collect();
    let data = TrainingSet::new(images, Stage::One, &Default::default()).unwrap();
    let cfg = TrainRunConfig {
        timesteps: 20,
        batch_size: 2,
        total_steps: 12,
        ckpt_every: 0,
        model: DenoiserConfig { channels: [4, 8, 8], groups: 4, time_dim: 8, emb_dim: 8, ..DenoiserConfig::default() },
        ..TrainRunConfig::default()
    };
    let mut full = TrainState::new(cfg.clone(), None).unwrap();
    full.run(&data, 12, |_, _| Ok(())).unwrap();
    let mut part = TrainState::new(cfg, None).unwrap();
    part.run(&data, 5, |_, _| Ok(())).unwrap();
    let ck = dir.path().join("part.pfck");
    part.save(&ck).unwrap();
    let mut resumed = TrainState::load(&ck).unwrap();
    resumed.run(&data, 12, |_, _| Ok(())).unwrap();
    let resume_same = resumed.params == full.params && resumed.adam == full.adam && resumed.log == full.log;
    outcome(
        real_same && synth_same && resume_same,
        format!("real corpus identical: {real_same}, synthetic corpus identical: {synth_same}, resume 5->12 equals 0->12: {resume_same}"),
    )
}

fn zero_init() -> Outcome {
    let cfg = TrainRunConfig::default().model_config();
    let mut worst = 0f32;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for seed in 0..3u64 {
        let s1 = init_denoiser::<f32>(&cfg, seed).unwrap();
        let s2 = s1.with_control(seed + 100).unwrap();
        let r = cfg.resolution;
        let x = Tensor::from_vec(&[2, 1, r, r], (0..2 * r * r).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let t = [rng.gen_range(0..cfg.timesteps), rng.gen_range(0..cfg.timesteps)];
        let q = [rng.gen_range(0..3), rng.gen_range(0..3)];
        let base = denoise_forward(&s1, &x, &t, &q, None).unwrap();
        for density in [0.0, 0.1, 0.5, 1.0] {
            let ctl = Tensor::from_vec(&[2, 1, r, r], (0..2 * r * r).map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 }).collect()).unwrap();
            let out = denoise_forward(&s2, &x, &t, &q, Some(&ctl)).unwrap();
            for (a, b) in out.data().iter().zip(base.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    outcome(worst == 0.0, format!("3 initializations x 4 control maps, max |stage two - stage one| = {worst:e}"))
}

struct Reference {
    models: ReferenceModels,
    set: SyntheticSet,
    cfg: ReferenceConfig,
    sample_secs: f64,
}

fn reference(log: &mut Vec<String>) -> Reference {
    let cfg = ReferenceConfig::default();
    let t0 = Instant::now();
    let models = train_reference(&cfg, |s| eprintln!("[{:>5.0}s] {s}", t0.elapsed().as_secs_f64())).unwrap();
    let t1 = Instant::now();
    let set = synthesize_reference(&models, 50, 4, &cfg.lines, 7).unwrap();
    let sample_secs = t1.elapsed().as_secs_f64();
    for (name, s) in &models.timings {
        log.push(format!("{name} {s:.0}s"));
    }
    log.push(format!("sampling 50 identities + 200 renders {sample_secs:.0}s"));
    Reference { models, set, cfg, sample_secs }
}

fn identity_preservation_criterion(r: &Reference) -> Outcome {
    let t0 = Instant::now();
    let rep = identity_preservation(&r.set, &r.models.matcher, &r.cfg.lines, 7).unwrap();
    let train: f64 = r.models.timings.iter().map(|(_, s)| s).sum();
    let total = train + r.sample_secs + t0.elapsed().as_secs_f64();
    let m = rep.margin;
    outcome(
        m.lo > 0.0 && rep.mean_iou >= 0.4,
        format!(
            "same-identity {:.3} vs cross-identity {:.3}, margin {:.3} with 95% CI [{:.3}, {:.3}] (need lower > 0); render/control IoU {:.3} (min 0.4); line IoU inter {:.3} intra {:.3}; {:.1} min",
            m.mean_genuine, m.mean_imposter, m.margin, m.lo, m.hi, rep.mean_iou, rep.inter_identity_iou, rep.intra_identity_iou, total / 60.0
        ),
    )
}

fn labeled_real(first_id: u64, n_ids: usize, seed: u64) -> LabeledImages {
    let caps = RealCorpusConfig { n_ids, first_id, seed, ..RealCorpusConfig::default() }.captures().unwrap();
    LabeledImages {
        images: caps.iter().map(|c| palmforge::imagecore::io::quantize(&c.image)).collect(),
        keys: caps.iter().map(|c| (false, c.identity_id)).collect(),
    }
}

/// Real ids used for training in the utility experiment.
const UTILITY_REAL_IDS: usize = 50;

fn utility(r: &Reference, log: &mut Vec<String>) -> Outcome {
    let t0 = Instant::now();
    let real = LabeledImages {
        images: r.models.captures.iter().map(|c| c.image.clone()).collect(),
        keys: r.models.captures.iter().map(|c| (false, c.identity_id)).collect(),
    };
    let mut synth = LabeledImages::default();
    for s in &r.set.identities {
        synth.images.push(s.image.clone());
        synth.keys.push((true, s.identity_id));
    }
    for x in &r.set.renders {
        synth.images.push(x.image.clone());
        synth.keys.push((true, x.identity_id));
    }
    let n_synth = synth.identities().len();
    let tests = vec![
        ("test-a".to_string(), labeled_real(10_000, 30, r.cfg.seed)),
        ("test-b".to_string(), labeled_real(20_000, 30, r.cfg.seed + 1)),
    ];
    let train_ids: BTreeSet<_> = real.first_identities(UTILITY_REAL_IDS).unwrap().identities();
    assert!(tests.iter().all(|(_, t)| t.identities().is_disjoint(&train_ids)));
    let configs = vec![
        TrainConfiguration::new("real", UTILITY_REAL_IDS, 0),
        TrainConfiguration::new("real+synthetic", UTILITY_REAL_IDS, n_synth),
    ];
    let cfg = UtilityConfig { matcher: r.cfg.matcher.clone(), ..UtilityConfig::default() };
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in [1u64, 2, 3] {
        let rep: UtilityReport = utility_experiment_on(&real, &synth, &configs, &tests, &cfg, seed).unwrap();
        let (a, b) = (rep.row("real").unwrap().average, rep.row("real+synthetic").unwrap().average);
        if b >= a {
            wins += 1;
        }
        lines.push(format!("seed {seed}: real {a:.3} real+synthetic {b:.3}"));
        log.push(format!("utility seed {seed}\n{}", rep.to_csv().trim_end()));
    }
    outcome(
        wins >= 2,
        format!(
            "{} real ids, +{n_synth} synthetic ids, TAR@FAR=1e-4 averaged over 2 held-out sets; {}; direction holds for {wins}/3 (need 2); {:.1} min",
            UTILITY_REAL_IDS,
            lines.join(", "),
            t0.elapsed().as_secs_f64() / 60.0
        ),
    )
}

fn loss_curve(r: &Reference) -> Outcome {
    let s = smoothed_losses(&r.models.stage1.log, 100);
    let (first, last) = (s[0], *s.last().unwrap());
    outcome(last < 0.5 * first, format!("stage one smoothed loss {first:.4} -> {last:.4} (need < 0.5x)"))
}

fn sample_density(r: &Reference) -> Outcome {
    let density = |imgs: &mut dyn Iterator<Item = &Image>| {
        let v: Vec<f64> = imgs.map(|i| extract_lines(i, &r.cfg.lines).unwrap().density()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let corpus = density(&mut r.models.captures.iter().map(|c| &c.image));
    let extra = synthesize_identities(&r.models.stage1.params, &r.models.stage1.schedule, 150, &QualityPolicy::High, 8).unwrap();
    let samples = density(&mut r.set.identities.iter().map(|s| &s.image).chain(extra.iter().map(|s| &s.image)));
    let rel = samples / corpus - 1.0;
    outcome(rel.abs() <= 0.4, format!("200 stage-one samples line density {samples:.4} vs corpus {corpus:.4} ({:+.1}%, limit 40%)", 100.0 * rel))
}

fn main() {
    let quick = std::env::var("PALMFORGE_ACCEPTANCE_QUICK").is_ok_and(|v| v != "0");
    let mut results: Vec<(String, Option<Outcome>, f64)> = Vec::new();
    let mut timed = |name: &str, f: &mut dyn FnMut() -> Option<Outcome>| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        let line = match &o {
            Some(o) => format!("{name}: {} ({:.1}s) {}", if o.pass { "PASS" } else { "FAIL" }, secs, o.detail),
            None => format!("{name}: SKIP"),
        };
        println!("{line}");
        results.push((name.to_string(), o, secs));
    };
    timed("criterion 1 gradient check", &mut || Some(gradients()));
    timed("criterion 2 forward-process statistics", &mut || Some(forward_statistics()));
    timed("criterion 3 schedule invariants", &mut || Some(schedules()));
    timed("criterion 4 line-extraction fidelity", &mut || Some(line_fidelity()));
    timed("criterion 5 RANSAC recovery", &mut || Some(ransac()));
    timed("criterion 6 TAR@FAR oracle", &mut || Some(tar_oracle()));
    let mut log = Vec::new();
    let reference = (!quick).then(|| reference(&mut log));
    timed("criterion 7 identity preservation", &mut || reference.as_ref().map(identity_preservation_criterion));
    timed("criterion 8 utility direction", &mut || reference.as_ref().map(|r| utility(r, &mut log)));
    timed("criterion 9 determinism and resume", &mut || Some(determinism()));
    timed("criterion 10 zero-init equivalence", &mut || Some(zero_init()));
    timed("check stage-one loss curve", &mut || reference.as_ref().map(loss_curve));
    timed("check stage-one sample density", &mut || reference.as_ref().map(sample_density));
    for l in &log {
        println!("  {}", l.replace('\n', "\n  "));
    }
    let failed: Vec<&str> = results.iter().filter(|(_, o, _)| o.as_ref().is_some_and(|o| !o.pass)).map(|(n, _, _)| n.as_str()).collect();
    if failed.is_empty() {
        println!("acceptance: all checks passed");
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
