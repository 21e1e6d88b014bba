//! Trains the recognition matcher on a real-analog corpus and reports
//! genuine/imposter scores, TAR at FAR 1e-4, a histogram SVG and a 2-D
//! embedding projection for held-out identities.
//!
//! `cargo run --example verification_scores -- [out_dir]`

use palmforge::eval::{histogram_svg, overlap_coefficient, project_2d, score_distributions_from, tar_at_far, train_matcher_on, MatcherConfig, Protocol};
use palmforge::pipeline::RealCorpusConfig;
use palmforge::Image;

fn corpus(first_id: u64, n_ids: usize) -> anyhow::Result<(Vec<Image>, Vec<usize>)> {
    let caps = RealCorpusConfig { n_ids, images_per_id: 8, first_id, ..RealCorpusConfig::default() }.captures()?;
    Ok((caps.iter().map(|c| c.image.clone()).collect(), caps.iter().map(|c| (c.identity_id - first_id) as usize).collect()))
}

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/scores".into());
    std::fs::create_dir_all(&out)?;
    let (train_imgs, train_labels) = corpus(0, 40)?;
    let matcher = train_matcher_on(&train_imgs, &train_labels, &MatcherConfig { steps: 200, ..MatcherConfig::default() }, 0)?;
    println!("training accuracy {:.3}", matcher.train_accuracy);

    let (test_imgs, test_labels) = corpus(500, 15)?;
    let emb = matcher.embed_all(&test_imgs)?;
    for protocol in [Protocol::AllPairs, Protocol::FirstVsRest] {
        let s = score_distributions_from(&emb, &test_labels, protocol)?;
        let r = tar_at_far(&s, 1e-4)?;
        println!("{:<14} genuine {:>4} imposter {:>5} TAR@1e-4 {:.3} threshold {:.3} overlap {:.3}", protocol.id(), s.genuine.len(), s.imposter.len(), r.tar, r.threshold, overlap_coefficient(&s, 50));
        std::fs::write(format!("{out}/scores_{}.csv", protocol.id()), s.to_csv())?;
        std::fs::write(format!("{out}/histogram_{}.svg", protocol.id()), histogram_svg(&s, 40, protocol.id()))?;
    }
    let points: Vec<Vec<f64>> = emb.iter().map(|e| e.vector.clone()).collect();
    let mut csv = String::from("x,y,identity\n");
    for (x, y, l) in project_2d(&points, &test_labels)? {
        csv.push_str(&format!("{x},{y},{l}\n"));
    }
    std::fs::write(format!("{out}/projection.csv"), csv)?;
    println!("wrote {out}");
    Ok(())
}
