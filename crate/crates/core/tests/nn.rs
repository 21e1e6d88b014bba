mod common;

mod engine {
    use crate::common::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use palmforge::nn::*;
    

    #[test]
    fn finite_differences_match_backprop() {
        let (err, n) = max_gradcheck_error(200, 11);
        assert!(n >= 200);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn matcher_ops_gradcheck() {
        // global pool and flatten → linear → l2 normalize → cosine logits against normalized
        // class weights → scale → softmax cross-entropy.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = vec![randn(&mut rng, &[4, 2, 3, 3], 0.5), randn(&mut rng, &[4], 0.1), randn(&mut rng, &[2, 4], 1.0), randn(&mut rng, &[3], 0.1), randn(&mut rng, &[5, 3], 1.0), randn(&mut rng, &[4], 0.1)];
        params[2] = randn(&mut rng, &[3, 4], 1.0);
        params.push(randn(&mut rng, &[3, 16], 0.5));
        let x = randn(&mut rng, &[3, 2, 4, 4], 1.0);
        let labels = [0usize, 4, 2];
        let loss_of = |ps: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
            let mut g = Graph::new(ps);
            let xi = g.input(x.clone());
            let (w, b) = (g.param(0), g.param(1));
            let h = g.conv2d(xi, w, Some(b));
            let (gg, gb) = (g.param(5), g.param(5));
            let h = g.group_norm(h, gg, gb, 2);
            let h = g.silu(h);
            let h = g.avg_pool2(h);
            let flat = g.flatten(h);
            let h = g.global_avg_pool(h);
            let (lw, lb) = (g.param(2), g.param(3));
            let e = g.linear(h, lw, lb);
            let fw = g.param(6);
            let ef = g.linear(flat, fw, lb);
            let e = g.add(e, ef);
            let e = g.l2_normalize(e);
            let cw = g.param(4);
            let cw = g.l2_normalize(cw);
            let logits = g.matmul_t(e, cw);
            let logits = g.scale(logits, 4.0);
            let l = g.softmax_ce(logits, &labels);
            let v = g.value(l).data()[0];
            (v, g.backward(l).unwrap())
        };
        let (_, grads) = loss_of(&params);
        let h = 1e-5;
        for ti in 0..params.len() {
            for j in 0..params[ti].len() {
                let mut pp = params.clone();
                pp[ti].data_mut()[j] += h;
                let mut pm = params.clone();
                pm[ti].data_mut()[j] -= h;
                let numeric = (loss_of(&pp).0 - loss_of(&pm).0) / (2.0 * h);
                let analytic = grads[ti].data()[j];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(rel <= 1e-4, "tensor {ti}[{j}]: {numeric} vs {analytic}");
            }
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let eps = Tensor::from_vec(&[1, 1, 2, 2], vec![0.3f64, -1.0, 2.0, 0.0]).unwrap();
        let params = vec![eps.clone()];
        let mut g = Graph::new(&params);
        let out = g.param(0);
        let loss = g.mse(out, eps);
        assert_eq!(g.value(loss).data()[0], 0.0);
        assert!(g.backward(loss).unwrap()[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubled_residual_quadruples_loss() {
        let target = Tensor::from_vec(&[4], vec![0.0f64; 4]).unwrap();
        let r = Tensor::from_vec(&[4], vec![0.5f64, -0.25, 1.0, 0.125]).unwrap();
        let r2 = r.map(|v| 2.0 * v);
        let params = vec![r, r2];
        let mut g = Graph::new(&params);
        let (a, b) = (g.param(0), g.param(1));
        let la = g.mse(a, target.clone());
        let lb = g.mse(b, target);
        assert_eq!(g.value(lb).data()[0], 4.0 * g.value(la).data()[0]);
    }

    #[test]
    fn init_is_seeded_with_zero_fusion() {
        let cfg = DenoiserConfig { channels: [8, 16, 16], control: true, ..Default::default() };
        let a = init_denoiser::<f32>(&cfg, 3).unwrap();
        assert_eq!(a, init_denoiser::<f32>(&cfg, 3).unwrap());
        assert_ne!(a, init_denoiser::<f32>(&cfg, 4).unwrap());
        for (n, t) in a.names.iter().zip(&a.tensors) {
            if is_fusion_param(n) {
                assert!(t.data().iter().all(|&v| v == 0.0), "{n}");
            }
        }
    }

    #[test]
    fn conv_weight_variance_is_he_scaled() {
        let cfg = DenoiserConfig { channels: [16, 32, 32], control: true, ..Default::default() };
        for (name, shape) in cfg.layout() {
            if !name.ends_with(".w") || shape.len() != 4 || is_fusion_param(&name) {
                continue;
            }
            let fan_in: usize = shape[1..].iter().product();
            let mut sum = 0.0;
            let mut n = 0usize;
            for seed in 0..10 {
                let p = init_denoiser::<f64>(&cfg, seed).unwrap();
                for &v in p.get(&name).unwrap().data() {
                    sum += v * v;
                    n += 1;
                }
            }
            let var = sum / n as f64;
            let expected = 2.0 / fan_in as f64;
            assert!((var / expected - 1.0).abs() <= 0.3, "{name}: {var} vs {expected}");
        }
    }

    fn small_cfg(control: bool) -> DenoiserConfig {
        DenoiserConfig { resolution: 16, channels: [8, 8, 16], groups: 4, time_dim: 16, emb_dim: 16, num_quality: 3, timesteps: 50, control, ..Default::default() }
    }

    fn rand_f32(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn zero_init_control_matches_backbone_exactly() {
        let base = init_denoiser::<f32>(&small_cfg(false), 9).unwrap();
        let stage2 = base.with_control(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_f32(&mut rng, &[3, 1, 16, 16]);
        let t = [0, 17, 49];
        let q = [0, 1, 2];
        let plain = denoise_forward(&base, &x, &t, &q, None).unwrap();
        for c in [Tensor::zeros(&[3, 1, 16, 16]), rand_f32(&mut rng, &[3, 1, 16, 16])] {
            let out = denoise_forward(&stage2, &x, &t, &q, Some(&c)).unwrap();
            assert_eq!(out.max_abs_diff(&plain), 0.0);
        }
    }

    #[test]
    fn forward_validates_inputs() {
        let p = init_denoiser::<f32>(&small_cfg(false), 0).unwrap();
        let x = Tensor::zeros(&[2, 1, 16, 16]);
        assert_eq!(denoise_forward(&p, &x, &[0, 1], &[0, 0], None).unwrap().shape(), &[2, 1, 16, 16]);
        assert!(denoise_forward(&p, &x, &[0, 50], &[0, 0], None).is_err());
        assert!(denoise_forward(&p, &x, &[0], &[0, 0], None).is_err());
        assert!(denoise_forward(&p, &x, &[0, 1], &[0, 3], None).is_err());
        assert!(denoise_forward(&p, &Tensor::zeros(&[2, 1, 8, 8]), &[0, 1], &[0, 0], None).is_err());
        assert!(denoise_forward(&p, &x, &[0, 1], &[0, 0], Some(&x)).is_err());
        let p2 = init_denoiser::<f32>(&small_cfg(true), 0).unwrap();
        assert!(denoise_forward(&p2, &x, &[0, 1], &[0, 0], None).is_err());
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let p = perturbed_params(&small_cfg(true), 2).cast::<f32>();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_f32(&mut rng, &[3, 1, 16, 16]);
        let c = rand_f32(&mut rng, &[3, 1, 16, 16]);
        let (t, q) = ([4, 20, 33], [2, 0, 1]);
        let out = denoise_forward(&p, &x, &t, &q, Some(&c)).unwrap();
        let perm = [2, 0, 1];
        let xp = Tensor::stack(&perm.map(|i| x.item(i))).unwrap();
        let cp = Tensor::stack(&perm.map(|i| c.item(i))).unwrap();
        let outp = denoise_forward(&p, &xp, &perm.map(|i| t[i]), &perm.map(|i| q[i]), Some(&cp)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(outp.item(k), out.item(i));
        }
    }

    #[test]
    fn non_finite_input_names_the_layer() {
        let p = init_denoiser::<f32>(&small_cfg(false), 0).unwrap();
        let mut x = Tensor::zeros(&[1, 1, 16, 16]);
        x.data_mut()[5] = f32::NAN;
        let batch = TrainBatch { eps: Tensor::zeros(&[1, 1, 16, 16]), x_t: x, t: vec![1], quality: vec![0], control: None };
        match loss_and_grads(&p, &batch) {
            Err(palmforge::Error::NumericalFailure { location, .. }) => assert_eq!(location, "in_conv"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn toy_training(steps: usize) -> Vec<f64> {
        let cfg = small_cfg(false);
        let mut p = init_denoiser::<f32>(&cfg, 0).unwrap();
        let mut st = AdamState::new(AdamConfig::new(2e-3, steps as u64, 0.0), &p.tensors);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut losses = Vec::new();
        for _ in 0..steps {
            let n = 4;
            let x0: Vec<f32> = (0..n * 256).map(|i| if (i % 16) % 5 == 0 { -1.0 } else { 1.0 }).collect();
            let eps = rand_f32(&mut rng, &[n, 1, 16, 16]);
            let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..50)).collect();
            let x_t = Tensor::from_vec(
                &[n, 1, 16, 16],
                x0.iter().zip(eps.data()).enumerate().map(|(i, (&x, &e))| {
                    let ab = 1.0 - (t[i / 256] as f32 + 1.0) / 51.0;
                    ab.sqrt() * x + (1.0 - ab).sqrt() * e
                }).collect(),
            )
            .unwrap();
            let batch = TrainBatch { x_t, eps, t, quality: vec![0; n], control: None };
            let (l, g) = loss_and_grads(&p, &batch).unwrap();
            adam_step(&mut p.tensors, &g, &mut st).unwrap();
            assert!(p.is_finite());
            losses.push(l);
        }
        losses
    }

    #[test]
    fn training_is_bit_deterministic_and_learns() {
        let a = toy_training(120);
        let b = toy_training(120);
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let head: f64 = a[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = a[a.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < 0.5 * head, "{head} -> {tail}");
    }

    #[test]
    fn input_skip_adds_the_gaussian_noise_estimate() {
        use palmforge::diffusion::{make_schedule, ScheduleKind};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_f32(&mut rng, &[3, 1, 16, 16]);
        let (t, q) = ([0, 25, 49], [2, 2, 2]);
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            let cfg = DenoiserConfig { schedule: kind, skip_sigma: Some(0.5), ..small_cfg(false) };
            let with = denoise_forward(&init_denoiser::<f32>(&cfg, 3).unwrap(), &x, &t, &q, None).unwrap();
            let bare = denoise_forward(&init_denoiser::<f32>(&DenoiserConfig { skip_sigma: None, ..cfg.clone() }, 3).unwrap(), &x, &t, &q, None).unwrap();
            let sched = make_schedule(kind, 50).unwrap();
            for (k, &ti) in t.iter().enumerate() {
                let ab = sched.alpha_bars[ti];
                let c = (1.0 - ab).sqrt() / (0.25 * ab + 1.0 - ab);
                for i in k * 256..(k + 1) * 256 {
                    let want = bare.data()[i] as f64 + c * x.data()[i] as f64;
                    assert!((with.data()[i] as f64 - want).abs() <= 1e-5, "t={ti}");
                }
            }
        }
        let bad = DenoiserConfig { skip_sigma: Some(0.0), ..small_cfg(false) };
        assert!(init_denoiser::<f32>(&bad, 0).is_err());
    }
}

mod adam {
    use palmforge::nn::*;
    

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 1e-4, 1000, 0.0), 1e-4);
        assert_eq!(cosine_lr(1000, 1e-4, 1000, 0.0), 0.0);
        assert!((cosine_lr(500, 1e-4, 1000, 0.0) - 5e-5).abs() < 1e-18);
        assert_eq!(cosine_lr(1500, 1e-4, 1000, 1e-6), 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let g = vec![Tensor::zeros(&[3])];
        let mut st = AdamState::new(AdamConfig::new(1e-3, 10, 0.0), &p);
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0f64, -0.02, 1e-3] {
            let mut p = vec![Tensor::from_vec(&[1], vec![0.0f64]).unwrap()];
            let mut st = AdamState::new(AdamConfig::new(1e-2, 100, 0.0), &p);
            adam_step(&mut p, &[Tensor::from_vec(&[1], vec![g]).unwrap()], &mut st).unwrap();
            // m̂ = g and v̂ = g², so the step is lr·g/(|g| + ε).
            let expected = -1e-2 * g / (g.abs() + 1e-8);
            assert!((p[0].data()[0] - expected).abs() < 1e-15, "{g}");
            assert!((p[0].data()[0].abs() - 1e-2).abs() < 1e-7);
        }
    }
}

mod checkpoint {
    use palmforge::nn::*;
    

    #[test]
    fn round_trip_and_corruption() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0f32, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![7.0f32]).unwrap();
        let meta = serde_json::json!({"step": 4, "kind": "test"});
        let bytes = encode_checkpoint(&meta, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.tensor("a").unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        assert!(decode_checkpoint(b"PFCK2xxxxxxxxxxxx").is_err());
    }
}

mod rng {
    use palmforge::rng::*;
    
    use rand::RngCore;

    #[test]
    fn distinct_triples_give_distinct_streams() {
        let a = stream(7, Domain::Stage2, 3, 1).next_u64();
        let b = stream(7, Domain::Stage2, 1, 3).next_u64();
        let c = stream(7, Domain::Stage1, 3, 1).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stream(7, Domain::Stage2, 3, 1).next_u64());
    }
}

mod schedule_props {
    use palmforge::nn::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn cosine_lr_follows_the_formula(step in 0u64..5000, total in 1u64..5000, base in 1e-6f64..1e-1, min_frac in 0.0f64..1.0) {
            let lr_min = base * min_frac;
            let lr = cosine_lr(step, base, total, lr_min);
            if step >= total {
                prop_assert_eq!(lr, lr_min);
            } else {
                let want = lr_min + 0.5 * (base - lr_min) * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos());
                prop_assert!((lr - want).abs() <= 1e-15 * base.max(1.0));
                prop_assert!(lr <= base * (1.0 + 1e-12) && lr >= lr_min * (1.0 - 1e-12));
            }
        }

        #[test]
        fn adam_counts_steps_and_keeps_moment_shapes(n in 1usize..20, steps in 1u64..10) {
            let mut p = vec![Tensor::<f64>::from_vec(&[n], vec![0.5; n]).unwrap()];
            let g = vec![Tensor::<f64>::from_vec(&[n], (0..n).map(|i| i as f64 - 3.0).collect()).unwrap()];
            let mut st = AdamState::new(AdamConfig::new(1e-2, 100, 0.0), &p);
            for k in 0..steps {
                prop_assert_eq!(st.step, k);
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            prop_assert_eq!(st.step, steps);
            prop_assert_eq!(st.m[0].shape(), p[0].shape());
            prop_assert_eq!(st.v[0].shape(), p[0].shape());
            prop_assert!(p[0].data().iter().all(|v| v.is_finite()));
        }
    }
}
