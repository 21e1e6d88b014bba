//! Samples Bézier crease identities and renders a few textured captures of each.
//!
//! `cargo run --example crease_identities -- [out_dir]`

use palmforge::crease::{render_creases, render_sample, sample_corpus, save_identities, CreaseConfig, PerspectiveConfig, TextureConfig};
use palmforge::imagecore::io::save_png;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/crease".into());
    std::fs::create_dir_all(&out)?;
    let specs = sample_corpus(4, 0, 42, &CreaseConfig::default())?;
    save_identities(&specs, format!("{out}/identities.json"))?;
    for spec in &specs {
        println!("identity {}: {} curves", spec.id, spec.curves.len());
        save_png(&render_creases(spec, 64, 64)?, format!("{out}/id{}_creases.png", spec.id))?;
        for k in 0..3 {
            let (img, h) = render_sample(spec, 64, k, &PerspectiveConfig::default(), &TextureConfig::default())?;
            save_png(&img, format!("{out}/id{}_capture{k}.png", spec.id))?;
            println!("  capture {k}: corner jitter {:.2} px", h.corner_displacement(64, 64));
        }
    }
    println!("wrote {out}");
    Ok(())
}
