use palmforge::eval::*;
use palmforge::{Error, Image};
use palmforge::crease::{render_sample, sample_corpus, CreaseConfig, PerspectiveConfig, TextureConfig};

pub fn toy_images(ids: usize, per: usize, seed: u64) -> (Vec<Image>, Vec<usize>) {
    let specs = sample_corpus(ids, 0, seed, &CreaseConfig::default()).unwrap();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (i, s) in specs.iter().enumerate() {
        for k in 0..per {
            images.push(render_sample(s, 64, k as u64, &PerspectiveConfig::default(), &TextureConfig::default()).unwrap().0);
            labels.push(i);
        }
    }
    (images, labels)
}

fn emb(v: &[f64]) -> Embedding {
    Embedding::from_raw(v).unwrap()
}

#[test]
fn tar_examples() {
    let s = ScoreSet { genuine: vec![0.9, 0.8, 0.2], imposter: vec![0.5, 0.4, 0.3, 0.1], protocol_id: "x".into() };
    let r = tar_at_far(&s, 0.25).unwrap();
    assert_eq!(r.threshold, 0.5);
    assert!((r.tar - 2.0 / 3.0).abs() < 1e-15);
    let sep = ScoreSet { genuine: vec![0.9; 5], imposter: vec![0.1; 5], protocol_id: "x".into() };
    assert_eq!(tar_at_far(&sep, 1e-4).unwrap().tar, 1.0);
    assert_eq!(tar_at_far(&sep, 1e-4).unwrap().threshold, 0.9);
    let tied = ScoreSet { genuine: vec![0.5], imposter: vec![0.5, 0.9], protocol_id: "x".into() };
    assert_eq!(tar_at_far(&tied, 0.1).unwrap(), TarAtFar { tar: 0.0, threshold: f64::INFINITY });
    let empty = ScoreSet { genuine: vec![], imposter: vec![0.1], protocol_id: "x".into() };
    assert!(tar_at_far(&empty, 0.1).is_err());
    assert!(tar_at_far(&sep, 0.0).is_err());
}

#[test]
fn score_protocol_counts() {
    let e = vec![emb(&[1.0, 0.0]), emb(&[0.9, 0.1]), emb(&[0.0, 1.0]), emb(&[0.1, 0.9])];
    let l = [0, 0, 1, 1];
    let all = score_distributions_from(&e, &l, Protocol::AllPairs).unwrap();
    assert_eq!((all.genuine.len(), all.imposter.len()), (2, 4));
    assert_eq!(all.protocol_id, "all-pairs");
    let fr = score_distributions_from(&e, &l, Protocol::FirstVsRest).unwrap();
    assert_eq!((fr.genuine.len(), fr.imposter.len()), (2, 2));
    assert!(score_distributions_from(&e[..2], &l[..2], Protocol::AllPairs).is_err());
    let single = score_distributions_from(&e[1..3], &l[1..3], Protocol::AllPairs).unwrap();
    assert!(single.genuine.is_empty());
}

#[test]
fn match_score_basics() {
    let a = emb(&[0.3, -1.2, 0.5]);
    let neg = emb(&[-0.3, 1.2, -0.5]);
    assert!((match_score(&a, &a) - 1.0).abs() < 1e-12);
    assert!((match_score(&a, &neg) + 1.0).abs() < 1e-12);
    assert_eq!(match_score(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])), 0.0);
    assert!(Embedding::from_raw(&[0.0, 0.0]).is_err());
}

#[test]
fn score_csv_round_trip() {
    let s = ScoreSet { genuine: vec![0.5, 0.25], imposter: vec![-0.125], protocol_id: "all-pairs".into() };
    let csv = s.to_csv();
    assert!(csv.starts_with("label,score\nG,0.5\n"));
    assert_eq!(ScoreSet::from_csv(&csv, "all-pairs").unwrap(), s);
    assert!(histogram_svg(&s, 10, "t<1>").contains("t&lt;1&gt;"));
    assert_eq!(histogram_csv(&s, 4).lines().count(), 5);
}

#[test]
fn overlap_bounds() {
    let same = ScoreSet { genuine: vec![0.1, 0.2], imposter: vec![0.1, 0.2], protocol_id: "x".into() };
    assert!((overlap_coefficient(&same, 20) - 1.0).abs() < 1e-12);
    let apart = ScoreSet { genuine: vec![0.9], imposter: vec![-0.9], protocol_id: "x".into() };
    assert_eq!(overlap_coefficient(&apart, 20), 0.0);
}

#[test]
fn projection_of_planar_data_preserves_distances() {
    let pts = vec![vec![1.0, 0.5], vec![-1.5, 0.2], vec![0.5, -0.7], vec![0.0, 0.0]];
    let mean: Vec<f64> = (0..2).map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / 4.0).collect();
    let c: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] - mean[0], p[1] - mean[1]]).collect();
    let out = project_2d(&c, &[0, 1, 2, 3]).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let d0 = ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt();
            let d1 = ((out[i].0 - out[j].0).powi(2) + (out[i].1 - out[j].1).powi(2)).sqrt();
            assert!((d0 - d1).abs() < 1e-6);
        }
    }
    assert!(project_2d(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]], &[0, 0, 0]).is_err());
}

#[test]
fn matcher_learns_toy_identities() {
    let (images, labels) = toy_images(20, 10, 3);
    let t0 = std::time::Instant::now();
    let m = train_matcher_on(&images, &labels, &MatcherConfig::default(), 1).unwrap();
    eprintln!("matcher: {:.1}s acc {}", t0.elapsed().as_secs_f64(), m.train_accuracy);
    assert!(m.train_accuracy >= 0.9, "accuracy {}", m.train_accuracy);
    let e = m.embed_all(&images[..3]).unwrap();
    for x in &e {
        let n: f64 = x.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6 && x.pre_norm > 0.0);
    }
    let q: Vec<usize> = m.embed_all(&images).unwrap().iter().map(|e| m.quality_of_norm(e.pre_norm).unwrap()).collect();
    for k in 0..3 {
        let f = q.iter().filter(|v| **v == k).count() as f64 / q.len() as f64;
        assert!((f - 1.0 / 3.0).abs() <= 0.02, "bucket {k}: {f}");
    }
}

mod common;

#[test]
fn tar_agrees_with_threshold_sweep() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    for _ in 0..300 {
        let (g, i) = common::random_scores(&mut rng);
        let far = [1e-4, 0.01, 0.1, 0.3][rng.gen_range(0..4)];
        let s = ScoreSet { genuine: g.clone(), imposter: i.clone(), protocol_id: "x".into() };
        let r = tar_at_far(&s, far).unwrap();
        assert_eq!((r.tar, r.threshold), common::tar_sweep(&g, &i, far));
    }
}

#[test]
fn identical_distributions_give_tar_near_far() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let v: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s = ScoreSet { genuine: v.clone(), imposter: v, protocol_id: "x".into() };
    for far in [1e-3, 0.01, 0.2] {
        let tar = tar_at_far(&s, far).unwrap().tar;
        assert!((tar - far).abs() <= 0.005, "far {far}: tar {tar}");
    }
}

#[test]
fn clustered_embeddings_project_apart() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut centers = vec![vec![0.0; 64]; 3];
    for (c, v) in centers.iter_mut().enumerate() {
        v[c] = std::f64::consts::FRAC_1_SQRT_2;
    }
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..20 {
            pts.push(center.iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    let out = project_2d(&pts, &labels).unwrap();
    let mut cent = [(0.0, 0.0); 3];
    for (x, y, l) in &out {
        cent[*l].0 += x / 20.0;
        cent[*l].1 += y / 20.0;
    }
    let spread = out.iter().map(|(x, y, l)| ((x - cent[*l].0).powi(2) + (y - cent[*l].1).powi(2)).sqrt()).fold(0.0, f64::max);
    for a in 0..3 {
        for b in a + 1..3 {
            let d = ((cent[a].0 - cent[b].0).powi(2) + (cent[a].1 - cent[b].1).powi(2)).sqrt();
            assert!(d > 5.0 * spread, "{d} vs {spread}");
        }
    }
    let doubled: Vec<Vec<f64>> = pts.iter().chain(&pts).cloned().collect();
    let labels2: Vec<usize> = labels.iter().chain(&labels).copied().collect();
    let out2 = project_2d(&doubled, &labels2).unwrap();
    for i in 0..pts.len() {
        assert_eq!(out2[i], out2[i + pts.len()]);
    }
}

fn small_labeled(first_id: u64, n: usize, synthetic: bool) -> LabeledImages {
    let cfg = palmforge::pipeline::RealCorpusConfig { n_ids: n, images_per_id: 4, first_id, resolution: 32, ..Default::default() };
    let caps = cfg.captures().unwrap();
    LabeledImages { images: caps.iter().map(|c| c.image.clone()).collect(), keys: caps.iter().map(|c| (synthetic, c.identity_id)).collect() }
}

#[test]
fn utility_report_layout_and_composition() {
    let real = small_labeled(0, 6, false);
    let synth = small_labeled(0, 6, true);
    let tests = vec![("a".to_string(), small_labeled(100, 3, false)), ("b".to_string(), small_labeled(200, 3, false))];
    let cfg = UtilityConfig {
        matcher: MatcherConfig { resolution: 32, steps: 8, batch_size: 8, ..MatcherConfig::default() },
        far: 1e-2,
        ..UtilityConfig::default()
    };
    let configs = TrainConfiguration::standard(4, 5);
    let rep = utility_experiment_on(&real, &synth, &configs, &tests, &cfg, 3).unwrap();
    assert_eq!(rep.rows.len(), 3);
    let csv = rep.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "configuration,real_ids,synth_ids,a,b,average");
    assert_eq!(lines.count(), 3);
    for row in &rep.rows {
        assert_eq!(row.tars.len(), 2);
        assert!((row.average - (row.tars[0] + row.tars[1]) / 2.0).abs() < 1e-15);
    }

    let direct = real.first_identities(4).unwrap();
    let labels: Vec<usize> = direct.keys.iter().map(|k| k.1 as usize).collect();
    let model = train_matcher_on(&direct.images, &labels, &cfg.matcher, 3).unwrap();
    let t = &tests[0].1;
    let s = score_distributions_from(&model.embed_all(&t.images).unwrap(), &t.keys, Protocol::AllPairs).unwrap();
    assert_eq!(rep.row("real").unwrap().tars[0], tar_at_far(&s, 1e-2).unwrap().tar);

    let leaky = vec![("leak".to_string(), small_labeled(2, 2, false))];
    assert!(matches!(utility_experiment_on(&real, &synth, &configs, &leaky, &cfg, 3), Err(Error::ProtocolViolation(_))));
    let synth_leak = vec![("leak".to_string(), small_labeled(4, 2, true))];
    assert!(matches!(utility_experiment_on(&real, &synth, &configs, &synth_leak, &cfg, 3), Err(Error::ProtocolViolation(_))));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn tar_is_monotone_in_far(seed in any::<u64>(), f1 in 1e-4f64..0.99, f2 in 1e-4f64..0.99) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (g, i) = super::common::random_scores(&mut rng);
            let s = ScoreSet { genuine: g, imposter: i, protocol_id: "x".into() };
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            prop_assert!(tar_at_far(&s, lo).unwrap().tar <= tar_at_far(&s, hi).unwrap().tar);
        }

        #[test]
        fn match_score_is_symmetric_and_bounded(a in prop::collection::vec(-5.0f64..5.0, 16), b in prop::collection::vec(-5.0f64..5.0, 16)) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let (ea, eb) = (Embedding::from_raw(&a).unwrap(), Embedding::from_raw(&b).unwrap());
            let s = match_score(&ea, &eb);
            prop_assert_eq!(s, match_score(&eb, &ea));
            prop_assert!((-1.0..=1.0).contains(&s));
            let n: f64 = ea.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-6);
        }
    }
}
