use std::collections::BTreeSet;
use std::path::Path;

use palmforge::diffusion::{make_schedule, NoiseSchedule, ScheduleKind};
use palmforge::eval::{train_matcher_on, MatcherConfig};
use palmforge::geometry::{BankConfig, BankEntry, Homography, HomographyBank};
use palmforge::imagecore::io::{load_png, LoadOptions};
use palmforge::lineextract::{extract_lines, LineExtractConfig};
use palmforge::nn::{init_denoiser, DenoiserConfig, DenoiserParams};
use palmforge::pipeline::*;
use palmforge::{Error, Image};

const RES: usize = 32;

struct Tiny {
    s1: DenoiserParams<f32>,
    s2: DenoiserParams<f32>,
    sched: NoiseSchedule,
    bank: HomographyBank,
}

fn tiny() -> Tiny {
    let cfg = DenoiserConfig { resolution: RES, channels: [4, 8, 8], groups: 4, time_dim: 8, emb_dim: 8, timesteps: 10, ..DenoiserConfig::default() };
    let s1 = init_denoiser::<f32>(&cfg, 1).unwrap();
    let s2 = s1.with_control(2).unwrap();
    let entry = |m: Homography, src: &str| BankEntry { m, inliers: 20, mean_err: 0.0, src: src.into() };
    let bank = HomographyBank {
        entries: vec![
            entry(Homography::identity(), "a"),
            entry(Homography::translation(1.0, -1.0), "b"),
            entry(Homography::from_corner_offsets(RES, RES, [(1.0, 0.5), (-1.0, 0.0), (0.5, 1.0), (0.0, -1.0)]).unwrap(), "c"),
        ],
        cfg: BankConfig::default(),
    };
    Tiny { s1, s2, sched: make_schedule(ScheduleKind::Linear, 10).unwrap(), bank }
}

fn models(t: &Tiny) -> CorpusModels<'_> {
    CorpusModels { stage1: &t.s1, stage1_schedule: &t.sched, stage2: &t.s2, stage2_schedule: &t.sched, bank: &t.bank, matcher: None }
}

fn corpus_cfg() -> CorpusConfig {
    CorpusConfig { n_ids: 5, renders_per_id: 4, seed: 9, ..CorpusConfig::default() }
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
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

#[test]
fn corpus_counts_and_referential_integrity() {
    let t = tiny();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("synth");
    let m = build_corpus(&corpus_cfg(), &models(&t), &out).unwrap();
    assert_eq!(m.records.len(), 25);
    assert_eq!(m.records.iter().filter(|r| r.source == Source::Stage1).count(), 5);
    assert_eq!(m.records.iter().filter(|r| r.source == Source::Stage2).count(), 20);
    assert_eq!(m.identities(), vec![0, 1, 2, 3, 4]);
    for r in &m.records {
        match r.source {
            Source::Stage2 => assert!(r.homography_index.unwrap() < t.bank.len()),
            _ => assert!(r.homography_index.is_none()),
        }
    }
    let reloaded = DatasetManifest::load(out.join("manifest.jsonl")).unwrap();
    assert_eq!(reloaded.records, m.records);
    reloaded.validate(Some(RES)).unwrap();
    assert!(out.join("ids/3/s1.png").exists() && out.join("ids/3/r3.png").exists());
    let seeds: BTreeSet<u64> = m.records.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), m.records.len());
}

#[test]
fn corpus_rebuild_is_byte_identical() {
    let t = tiny();
    let dir = tempfile::tempdir().unwrap();
    build_corpus(&corpus_cfg(), &models(&t), &dir.path().join("a")).unwrap();
    build_corpus(&corpus_cfg(), &models(&t), &dir.path().join("b")).unwrap();
    let (a, b) = (dir_bytes(&dir.path().join("a")), dir_bytes(&dir.path().join("b")));
    assert_eq!(a.len(), 26);
    assert_eq!(a, b);
}

#[test]
fn corpus_refuses_existing_output_and_leaves_no_partial_dir() {
    let t = tiny();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    std::fs::create_dir(&out).unwrap();
    assert!(build_corpus(&corpus_cfg(), &models(&t), &out).is_err());

    let out = dir.path().join("d");
    let empty = HomographyBank { entries: vec![], cfg: BankConfig::default() };
    let m = CorpusModels { bank: &empty, ..models(&t) };
    assert!(matches!(build_corpus(&corpus_cfg(), &m, &out), Err(Error::BankEmpty)));
    assert!(!out.exists());

    let r: palmforge::Result<()> = atomic_dir(&out, |tmp| {
        std::fs::write(tmp.join("x"), b"1").unwrap();
        Err(Error::InvalidArgument("boom".into()))
    });
    assert!(r.is_err());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn stage_two_record_needs_stage_one_parent() {
    let rec = |id, source| ManifestRecord {
        identity_id: id,
        image_path: format!("ids/{id}/x.png").into(),
        source,
        quality_label: None,
        homography_index: Some(0),
        seed: 0,
    };
    let mut m = DatasetManifest::new("/nonexistent");
    m.records = vec![rec(0, Source::Stage1), rec(0, Source::Stage2), rec(1, Source::Stage2)];
    assert!(m.validate(None).is_err());
    m.records.pop();
    m.validate(None).unwrap();
    assert!(m.validate(Some(RES)).is_err());
    let text = m.to_jsonl().unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(DatasetManifest::from_jsonl(&text, "/nonexistent").unwrap(), m);
}

#[test]
fn identities_are_sequential_and_reproducible() {
    let t = tiny();
    let a = synthesize_identities(&t.s1, &t.sched, 10, &QualityPolicy::High, 3).unwrap();
    let b = synthesize_identities(&t.s1, &t.sched, 10, &QualityPolicy::High, 3).unwrap();
    assert_eq!(a.iter().map(|s| s.identity_id).collect::<Vec<_>>(), (0..10).collect::<Vec<u64>>());
    assert!(a.iter().all(|s| s.quality == 2));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.image, y.image);
        assert_eq!(x.seed, y.seed);
    }
    assert_ne!(a[0].image, a[1].image);
    assert!(synthesize_identities(&t.s2, &t.sched, 2, &QualityPolicy::High, 3).is_err());
}

#[test]
fn render_variations_contract() {
    let t = tiny();
    let id = &synthesize_identities(&t.s1, &t.sched, 1, &QualityPolicy::High, 5).unwrap()[0].image;
    let lines = LineExtractConfig::default();
    let ident = HomographyBank { entries: vec![t.bank.entries[0].clone()], cfg: BankConfig::default() };
    let one = render_variations(&t.s2, &t.sched, id, 1, &ident, &QualityPolicy::Uniform, &lines, 4).unwrap();
    let again = render_variations(&t.s2, &t.sched, id, 1, &ident, &QualityPolicy::Uniform, &lines, 4).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].image, again[0].image);
    assert_eq!(one[0].control, extract_lines(id, &lines).unwrap());

    let many = render_variations(&t.s2, &t.sched, id, 20, &t.bank, &QualityPolicy::Tokens(vec![0, 1]), &lines, 4).unwrap();
    assert_eq!(many.len(), 20);
    assert!(many.iter().all(|r| r.quality <= 1 && r.image.width() == RES));
    assert!(many.iter().any(|r| r.homography_index != many[0].homography_index));
    let empty = HomographyBank { entries: vec![], cfg: BankConfig::default() };
    assert!(matches!(render_variations(&t.s2, &t.sched, id, 2, &empty, &QualityPolicy::Uniform, &lines, 4), Err(Error::BankEmpty)));
    assert!(render_variations(&t.s1, &t.sched, id, 2, &t.bank, &QualityPolicy::Uniform, &lines, 4).is_err());
    assert!(render_variations(&t.s2, &t.sched, id, 2, &t.bank, &QualityPolicy::Tokens(vec![3]), &lines, 4).is_err());
}

#[test]
fn quality_buckets_follow_calibration_quantiles() {
    let cfg = RealCorpusConfig { n_ids: 12, images_per_id: 25, resolution: 32, ..RealCorpusConfig::default() };
    let caps = cfg.captures().unwrap();
    let images: Vec<Image> = caps.iter().map(|c| c.image.clone()).collect();
    let labels: Vec<usize> = caps.iter().map(|c| c.identity_id as usize).collect();
    let mcfg = MatcherConfig { resolution: 32, steps: 20, batch_size: 8, ..MatcherConfig::default() };
    let mut matcher = train_matcher_on(&images, &labels, &mcfg, 1).unwrap();
    let q: Vec<usize> = images.iter().map(|i| quality_label(i, &matcher).unwrap()).collect();
    for token in 0..3 {
        let f = q.iter().filter(|&&v| v == token).count() as f64 / q.len() as f64;
        assert!((f - 1.0 / 3.0).abs() <= 0.02, "token {token}: {f}");
    }
    assert_eq!(quality_label(&images[7], &matcher).unwrap(), q[7]);
    let th = matcher.thresholds.clone().unwrap();
    assert_eq!(matcher.quality_of_norm(th[0] * 0.5).unwrap(), 0);
    matcher.thresholds = None;
    assert!(matches!(quality_label(&images[0], &matcher), Err(Error::NotCalibrated)));
}

#[test]
fn real_corpus_layout_and_determinism() {
    let cfg = RealCorpusConfig { n_ids: 4, images_per_id: 3, first_id: 10, seed: 7, ..RealCorpusConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let m = generate_real_corpus(&cfg, &dir.path().join("a")).unwrap();
    generate_real_corpus(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(m.records.len(), 12);
    assert_eq!(m.identities(), vec![10, 11, 12, 13]);
    assert!(m.records.iter().all(|r| r.source == Source::RealAnalog));
    assert_eq!(dir_bytes(&dir.path().join("a")), dir_bytes(&dir.path().join("b")));
    let img = load_png(dir.path().join("a/ids/11/r2.png"), LoadOptions::default()).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
    assert!(generate_real_corpus(&cfg, &dir.path().join("a")).is_err());
}
