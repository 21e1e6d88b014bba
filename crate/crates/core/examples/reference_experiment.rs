//! The full reference experiment: real-analog corpus, matcher, homography
//! bank, both diffusion stages, 50 synthetic identities with 4 renders each,
//! and the identity-preservation statistics. Roughly 20 minutes on one core.
//!
//! `cargo run --release --example reference_experiment -- [out_dir]`

use std::path::Path;
use std::time::Instant;

use palmforge::imagecore::io::{save_png, save_png_binary};
use palmforge::pipeline::{identity_preservation, synthesize_reference, train_reference, ReferenceConfig};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/reference".into());
    let out = Path::new(&out);
    std::fs::create_dir_all(out)?;
    let cfg = ReferenceConfig::default();
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let t0 = Instant::now();
    let m = train_reference(&cfg, |s| eprintln!("[{:>5.0}s] {s}", t0.elapsed().as_secs_f64()))?;
    m.stage1.save(out.join("stage1.pfck"))?;
    m.stage2.save(out.join("stage2.pfck"))?;
    m.matcher.save(out.join("matcher.pfck"))?;
    m.bank.save(out.join("bank.json"))?;
    println!("bank entries {}, matcher accuracy {:.3}", m.bank.len(), m.matcher.train_accuracy);

    let set = synthesize_reference(&m, 50, 4, &cfg.lines, 7)?;
    let rep = identity_preservation(&set, &m.matcher, &cfg.lines, 7)?;
    println!("{}", serde_json::to_string_pretty(&rep)?);
    std::fs::write(out.join("preservation.json"), serde_json::to_string_pretty(&rep)?)?;
    for s in set.identities.iter().take(8) {
        save_png(&s.image, out.join(format!("id{}_s1.png", s.identity_id)))?;
    }
    for r in set.renders.iter().take(32) {
        save_png(&r.image, out.join(format!("id{}_r{}.png", r.identity_id, r.index)))?;
        save_png_binary(&r.control, out.join(format!("id{}_r{}_control.png", r.identity_id, r.index)))?;
    }
    eprintln!("[{:>5.0}s] done", t0.elapsed().as_secs_f64());
    Ok(())
}
