//! Compares backpropagated denoiser gradients with central finite
//! differences in double precision.
//!
//! `cargo run --example gradient_check`

use palmforge::nn::{init_denoiser, loss_and_grads, DenoiserConfig, Tensor, TrainBatch};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

fn main() -> anyhow::Result<()> {
    let cfg = DenoiserConfig { resolution: 8, channels: [8, 16, 16], groups: 4, time_dim: 16, emb_dim: 16, timesteps: 10, control: true, ..DenoiserConfig::default() };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut p = init_denoiser::<f64>(&cfg, 1)?;
    for t in &mut p.tensors {
        let noise: Vec<f64> = (0..t.len()).map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
        t.add_assign(&Tensor::from_vec(t.shape(), noise)?);
    }
    let mut randn = |n| Tensor::from_vec(&[2, 1, 8, 8], (0..n).map(|_| rng.sample(StandardNormal)).collect());
    let batch = TrainBatch { x_t: randn(128)?, eps: randn(128)?, t: vec![2, 9], quality: vec![1, 0], control: Some(Tensor::from_vec(&[2, 1, 8, 8], (0..128).map(|i| (i % 3 == 0) as u8 as f64).collect())?) };
    let (loss, grads) = loss_and_grads(&p, &batch)?;
    println!("loss {loss:.6}");
    let h = 1e-4;
    let mut worst = 0f64;
    for (ti, name) in p.names.clone().iter().enumerate() {
        let j = p.tensors[ti].len() / 2;
        let orig = p.tensors[ti].data()[j];
        p.tensors[ti].data_mut()[j] = orig + h;
        let lp = loss_and_grads(&p, &batch)?.0;
        p.tensors[ti].data_mut()[j] = orig - h;
        let lm = loss_and_grads(&p, &batch)?.0;
        p.tensors[ti].data_mut()[j] = orig;
        let (num, ana) = ((lp - lm) / (2.0 * h), grads[ti].data()[j]);
        let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
        worst = worst.max(rel);
        println!("{name:<24} analytic {ana:+.6e} numeric {num:+.6e} rel {rel:.1e}");
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
