//! Prints linear and cosine noise schedules and noises one capture along
//! the forward process.
//!
//! `cargo run --example noise_schedules -- [out_dir]`

use palmforge::diffusion::{forward_noise, make_schedule, ScheduleKind};
use palmforge::imagecore::io::save_png;
use palmforge::pipeline::RealCorpusConfig;
use palmforge::Image;
use rand::{Rng, SeedableRng};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/noise".into());
    std::fs::create_dir_all(&out)?;
    for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
        let s = make_schedule(kind, 200)?;
        let probe: Vec<String> = [0, 50, 100, 150, 199].iter().map(|&t| format!("t={t}: {:.4}", s.alpha_bars[t])).collect();
        println!("{kind:>7} alpha_bar {}", probe.join("  "));
    }
    let s = make_schedule(ScheduleKind::Linear, 200)?;
    let x0 = RealCorpusConfig { n_ids: 1, images_per_id: 1, ..RealCorpusConfig::default() }.captures()?.remove(0).image;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let eps = Image::from_fn(64, 64, |_, _| rng.sample(rand_distr::StandardNormal));
    let scaled = x0.map(|v| 2.0 * v - 1.0);
    for t in [0, 20, 60, 120, 199] {
        let xt = forward_noise(&scaled, t, &eps, &s)?;
        save_png(&xt.map(|v| (v + 1.0) / 2.0).clamp01(), format!("{out}/t{t:03}.png"))?;
    }
    println!("wrote {out}");
    Ok(())
}
