//! Extracts crease line maps from textured captures and scores them against
//! the rasterizer's stroke masks.
//!
//! `cargo run --example line_maps -- [out_dir]`

use palmforge::crease::{composite_texture, render_strokes, sample_corpus, CreaseConfig, TextureConfig};
use palmforge::imagecore::io::{save_png, save_png_binary};
use palmforge::lineextract::{extract_lines, LineExtractConfig};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/lines".into());
    std::fs::create_dir_all(&out)?;
    let cfg = LineExtractConfig::default();
    println!("config: {}", serde_json::to_string(&cfg)?);
    for spec in sample_corpus(5, 0, 3, &CreaseConfig::default())? {
        let strokes = render_strokes(&spec, 64, 64)?;
        let textures = [1u64, 2].map(|t| composite_texture(&strokes.image, spec.seed ^ t, &TextureConfig::default()));
        let maps = textures.iter().map(|img| extract_lines(img.as_ref().unwrap(), &cfg)).collect::<Result<Vec<_>, _>>()?;
        let covered = (0..64 * 64).filter(|&i| strokes.support.get(i % 64, i / 64) && maps[0].get(i % 64, i / 64)).count();
        println!(
            "identity {}: coverage {:.2}, line IoU across textures {:.2}",
            spec.id,
            covered as f64 / strokes.support.count_ones() as f64,
            maps[0].iou(&maps[1])
        );
        save_png(textures[0].as_ref().unwrap(), format!("{out}/id{}.png", spec.id))?;
        save_png_binary(&maps[0], format!("{out}/id{}_lines.png", spec.id))?;
    }
    Ok(())
}
