//! Builds a homography bank from genuine capture pairs (ORB keypoints,
//! Hamming matching, RANSAC) and samples from it.
//!
//! `cargo run --example homography_bank -- [out.json]`

use palmforge::geometry::{build_homography_bank, detect_keypoints, sample_homography, BankConfig, PairOutcome};
use palmforge::pipeline::RealCorpusConfig;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/bank.json".into());
    let caps = RealCorpusConfig { n_ids: 20, images_per_id: 2, ..RealCorpusConfig::default() }.captures()?;
    println!("keypoints in the first capture: {}", detect_keypoints(&caps[0].image, 500).len());
    let pairs: Vec<_> = caps.chunks(2).map(|c| (c[0].image.clone(), c[1].image.clone())).collect();
    let sources: Vec<String> = caps.chunks(2).map(|c| format!("id{}", c[0].identity_id)).collect();
    let (bank, outcomes) = build_homography_bank(&pairs, &sources, &BankConfig::default())?;
    let accepted = outcomes.iter().filter(|o| matches!(o, PairOutcome::Accepted { .. })).count();
    println!("accepted {accepted}/{} pairs", outcomes.len());
    for e in bank.entries.iter().take(5) {
        println!("  {}: {} inliers, error {:.2} px, corner shift {:.2} px", e.src, e.inliers, e.mean_err, e.m.corner_displacement(64, 64));
    }
    let h = sample_homography(&bank, 7)?;
    println!("sampled: {:?}", h.matrix());
    if let Some(dir) = std::path::Path::new(&out).parent() {
        std::fs::create_dir_all(dir)?;
    }
    bank.save(&out)?;
    println!("wrote {out}");
    Ok(())
}
