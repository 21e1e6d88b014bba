//! Trains a small stage-one denoiser and its line-conditioned stage-two
//! successor on a real-analog corpus, then synthesizes identities and
//! renders each under homographies from a bank.
//!
//! `cargo run --example two_stage_generation -- [out_dir] [steps]`
//!
//! The default 300 steps take a few minutes on one core and give blurry but
//! structured samples; the reference configuration uses 2,000 / 1,000.

use std::path::Path;

use palmforge::diffusion::{load_model, train, Stage, TrainRunConfig};
use palmforge::geometry::{build_homography_bank, BankConfig};
use palmforge::imagecore::io::{save_png, save_png_binary};
use palmforge::pipeline::{generate_real_corpus, render_variations, synthesize_identities, QualityPolicy, RealCorpusConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "out/two_stage".into());
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let out = Path::new(&out);
    std::fs::create_dir_all(out)?;

    let corpus = out.join("real");
    if !corpus.exists() {
        generate_real_corpus(&RealCorpusConfig { n_ids: 40, images_per_id: 5, ..RealCorpusConfig::default() }, &corpus)?;
    }
    let one = TrainRunConfig { manifest: corpus.join("manifest.jsonl"), total_steps: steps, ckpt_every: 0, ..TrainRunConfig::default() };
    let s1_path = train(&one, None, &out.join("stage1"))?;
    let two = TrainRunConfig { stage: Stage::Two, seed: 1, total_steps: steps / 2 + 1, ..one };
    let s2_path = train(&two, Some(&s1_path), &out.join("stage2"))?;
    println!("checkpoints: {} {}", s1_path.display(), s2_path.display());

    let (s1, sched1) = load_model(&s1_path)?;
    let (s2, sched2) = load_model(&s2_path)?;
    let caps = RealCorpusConfig { n_ids: 10, images_per_id: 2, ..RealCorpusConfig::default() }.captures()?;
    let pairs: Vec<_> = caps.chunks(2).map(|c| (c[0].image.clone(), c[1].image.clone())).collect();
    let names: Vec<String> = (0..pairs.len()).map(|i| format!("pair{i}")).collect();
    let (bank, _) = build_homography_bank(&pairs, &names, &BankConfig::default())?;

    let ids = synthesize_identities(&s1, &sched1, 3, &QualityPolicy::High, 11)?;
    for id in &ids {
        save_png(&id.image, out.join(format!("id{}_s1.png", id.identity_id)))?;
        let renders = render_variations(&s2, &sched2, &id.image, 4, &bank, &QualityPolicy::Uniform, &two.lines, id.seed)?;
        for r in &renders {
            save_png(&r.image, out.join(format!("id{}_r{}.png", id.identity_id, r.index)))?;
            save_png_binary(&r.control, out.join(format!("id{}_r{}_control.png", id.identity_id, r.index)))?;
        }
        println!("identity {}: {} renders, bank entries used {:?}", id.identity_id, renders.len(), renders.iter().map(|r| r.homography_index).collect::<Vec<_>>());
    }
    Ok(())
}
