//! Real / synthetic / combined matcher training on disjoint identities and
//! the resulting TAR@FAR table. Synthetic identities come from a
//! previously built corpus (see the `synthesize` CLI command).
//!
//! `cargo run --example utility_table -- <real_manifest.jsonl> <synthetic_manifest.jsonl> [real_ids] [synthetic_ids]`

use palmforge::eval::{utility_experiment, LabeledImages, TrainConfiguration, UtilityConfig};
use palmforge::pipeline::{DatasetManifest, RealCorpusConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    anyhow::ensure!(args.len() >= 2, "usage: utility_table <real_manifest> <synthetic_manifest> [real_ids] [synthetic_ids]");
    let real = DatasetManifest::load(&args[0])?;
    let synth = DatasetManifest::load(&args[1])?;
    let r: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(50);
    let s: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or_else(|| synth.identities().len());

    let dir = tempfile::tempdir()?;
    let first = real.identities().last().map_or(0, |m| m + 1_000);
    let test = palmforge::pipeline::generate_real_corpus(&RealCorpusConfig { n_ids: 30, first_id: first, seed: 99, ..Default::default() }, &dir.path().join("test"))?;
    println!("test identities: {}", LabeledImages::from_manifest(&test, 64)?.identities().len());
    let report = utility_experiment(&real, &synth, &TrainConfiguration::standard(r, s), &[("held-out".into(), test)], &UtilityConfig::default(), 1)?;
    print!("{}", report.to_csv());
    Ok(())
}
