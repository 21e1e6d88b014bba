use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use palmforge::diffusion::{load_model, train, ScheduleKind, Stage, TrainRunConfig};
use palmforge::eval::{
    histogram_csv, histogram_svg, overlap_coefficient, project_2d, score_distributions, tar_at_far, train_matcher, utility_experiment,
    MatcherConfig, MatcherModel, Protocol, TrainConfiguration, UtilityConfig,
};
use palmforge::geometry::{build_homography_bank, BankConfig, HomographyBank, PairOutcome};
use palmforge::pipeline::{build_corpus, generate_real_corpus, CorpusConfig, CorpusModels, DatasetManifest, RealCorpusConfig};

#[derive(Parser)]
#[command(name = "palmforge", version, about = "Synthetic palmprint identities: corpora, diffusion training, homography banks and verification metrics")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// Worker threads (falls back to PALMFORGE_THREADS, then all cores)
    #[arg(long, global = true, value_name = "INT", env = "PALMFORGE_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct Common {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// JSON config; flags given on the command line override its fields
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run seed [default: from config, else 0]
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the real-analog corpus (crease identities under capture jitter)
    GenCorpus {
        #[command(flatten)]
        common: Common,
        /// Number of identities [default: 200]
        #[arg(long, value_name = "INT")]
        n: Option<usize>,
        /// Captures per identity [default: 10]
        #[arg(long, value_name = "INT")]
        images_per_id: Option<usize>,
        /// First identity id [default: 0]
        #[arg(long, value_name = "INT")]
        first_id: Option<u64>,
        /// Square image size in pixels [default: 64]
        #[arg(long, value_name = "INT")]
        resolution: Option<usize>,
    },
    /// Train a diffusion stage or the recognition matcher on a manifest
    Train {
        #[command(flatten)]
        common: Common,
        /// Which model to train
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Training manifest (JSON lines)
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Stage-one checkpoint to start stage two from
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
        /// Checkpoint of this run to continue from
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Optimizer steps [default: 2000 diffusion, 300 matcher]
        #[arg(long, value_name = "INT")]
        steps: Option<u64>,
        /// Batch size [default: 8 diffusion, 32 matcher]
        #[arg(long, value_name = "INT")]
        batch_size: Option<usize>,
        /// Diffusion steps T [default: 200]
        #[arg(long, value_name = "INT")]
        timesteps: Option<usize>,
        /// Noise schedule [default: linear]
        #[arg(long, value_enum)]
        schedule: Option<ScheduleArg>,
        /// Checkpoint interval in steps, 0 for final only [default: 500]
        #[arg(long, value_name = "INT")]
        ckpt_every: Option<u64>,
    },
    /// Estimate the homography bank from genuine pairs of a manifest
    BuildBank {
        #[command(flatten)]
        common: Common,
        /// Corpus manifest (JSON lines)
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Maximum genuine pairs to try [default: 120]
        #[arg(long, value_name = "INT")]
        pairs: Option<usize>,
    },
    /// Generate identities with stage one and render them with stage two
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        stage1: PathBuf,
        #[arg(long, value_name = "FILE")]
        stage2: PathBuf,
        /// Homography bank JSON
        #[arg(long, value_name = "FILE")]
        bank: PathBuf,
        /// Calibrated matcher used to label image quality
        #[arg(long, value_name = "FILE")]
        matcher: Option<PathBuf>,
        /// Identities to generate [default: 200]
        #[arg(long, value_name = "INT")]
        n_ids: Option<usize>,
        /// Stage-two renders per identity [default: 20]
        #[arg(long, value_name = "INT")]
        renders: Option<usize>,
    },
    /// Utility experiment: matchers trained on real, synthetic and combined data
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Real training manifest
        #[arg(long, value_name = "FILE")]
        real: PathBuf,
        /// Synthetic training manifest
        #[arg(long, value_name = "FILE")]
        synth: PathBuf,
        /// Test set as NAME=MANIFEST (repeatable)
        #[arg(long = "test", value_name = "NAME=FILE", required = true)]
        tests: Vec<String>,
        /// Real identities in the training configurations [default: all]
        #[arg(long, value_name = "INT")]
        real_ids: Option<usize>,
        /// Synthetic identities in the training configurations [default: all]
        #[arg(long, value_name = "INT")]
        synth_ids: Option<usize>,
        /// False acceptance rate of the operating point [default: 0.0001]
        #[arg(long, value_name = "FLOAT")]
        far: Option<f64>,
        /// Pairing protocol [default: all-pairs]
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
    },
    /// Score distributions, TAR@FAR, overlap and PCA projection for one matcher
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        matcher: PathBuf,
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// False acceptance rate of the operating point [default: 0.0001]
        #[arg(long, value_name = "FLOAT")]
        far: Option<f64>,
        /// Pairing protocol [default: all-pairs]
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
        /// Histogram bins [default: 40]
        #[arg(long, value_name = "INT")]
        bins: Option<usize>,
        /// Also write SVG score histograms
        #[arg(long)]
        plot: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    One,
    Two,
    Matcher,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Linear,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    AllPairs,
    FirstVsRest,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::AllPairs => Protocol::AllPairs,
            ProtocolArg::FirstVsRest => Protocol::FirstVsRest,
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn write_resolved<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn set<T>(field: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *field = v;
    }
}

fn gen_corpus(common: Common, n: Option<usize>, per: Option<usize>, first: Option<u64>, res: Option<usize>) -> Result<()> {
    let mut cfg: RealCorpusConfig = load_config(common.config.as_deref())?;
    set(&mut cfg.n_ids, n);
    set(&mut cfg.images_per_id, per);
    set(&mut cfg.first_id, first);
    set(&mut cfg.resolution, res);
    set(&mut cfg.seed, common.seed);
    let m = generate_real_corpus(&cfg, &common.out)?;
    write_resolved(&common.out, &cfg)?;
    println!("{} images of {} identities in {}", m.records.len(), cfg.n_ids, common.out.display());
    Ok(())
}

#[derive(Serialize, serde::Deserialize, Default)]
#[serde(default)]
struct MatcherRun {
    manifest: PathBuf,
    seed: u64,
    matcher: MatcherConfig,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: Common,
    stage: StageArg,
    manifest: Option<PathBuf>,
    init: Option<PathBuf>,
    resume: Option<PathBuf>,
    steps: Option<u64>,
    batch: Option<usize>,
    timesteps: Option<usize>,
    schedule: Option<ScheduleArg>,
    ckpt_every: Option<u64>,
) -> Result<()> {
    if let StageArg::Matcher = stage {
        let mut run: MatcherRun = load_config(common.config.as_deref())?;
        set(&mut run.manifest, manifest);
        set(&mut run.seed, common.seed);
        set(&mut run.matcher.steps, steps);
        set(&mut run.matcher.batch_size, batch);
        if run.manifest.as_os_str().is_empty() {
            bail!("--manifest (or \"manifest\" in the config) is required");
        }
        let m = DatasetManifest::load(&run.manifest)?;
        let model = train_matcher(&m, &run.matcher, run.seed)?;
        write_resolved(&common.out, &run)?;
        model.save(common.out.join("matcher.pfck"))?;
        let mut labeled = m.clone();
        for r in &mut labeled.records {
            let img = m.load_image(r, run.matcher.resolution)?;
            r.quality_label = Some(palmforge::pipeline::quality_label(&img, &model)?);
            r.image_path = std::path::absolute(m.resolve(r))?;
        }
        labeled.save(common.out.join("labeled_manifest.jsonl"))?;
        println!("matcher training accuracy {:.3}", model.train_accuracy);
        return Ok(());
    }
    let mut cfg: TrainRunConfig = load_config(common.config.as_deref())?;
    cfg.stage = if let StageArg::Two = stage { Stage::Two } else { Stage::One };
    set(&mut cfg.manifest, manifest);
    set(&mut cfg.seed, common.seed);
    set(&mut cfg.total_steps, steps);
    set(&mut cfg.batch_size, batch);
    set(&mut cfg.timesteps, timesteps);
    set(&mut cfg.ckpt_every, ckpt_every);
    if let Some(s) = schedule {
        cfg.schedule = match s {
            ScheduleArg::Linear => ScheduleKind::Linear,
            ScheduleArg::Cosine => ScheduleKind::Cosine,
        };
    }
    if cfg.manifest.as_os_str().is_empty() {
        bail!("--manifest (or \"manifest\" in the config) is required");
    }
    if cfg.stage == Stage::Two && init.is_none() && resume.is_none() {
        bail!("stage two starts from a stage-one model: pass --init <stage-one checkpoint>");
    }
    write_resolved(&common.out, &cfg)?;
    let model = train(&cfg, resume.as_deref().or(init.as_deref()), &common.out)?;
    println!("wrote {}", model.display());
    Ok(())
}

fn build_bank(common: Common, manifest: PathBuf, pairs: Option<usize>) -> Result<()> {
    #[derive(Serialize, serde::Deserialize)]
    #[serde(default)]
    struct BankRun {
        pairs: usize,
        resolution: usize,
        bank: BankConfig,
    }
    impl Default for BankRun {
        fn default() -> Self {
            Self { pairs: 120, resolution: palmforge::CANONICAL_RES, bank: BankConfig::default() }
        }
    }
    let mut run: BankRun = load_config(common.config.as_deref())?;
    set(&mut run.pairs, pairs);
    set(&mut run.bank.seed, common.seed);
    let m = DatasetManifest::load(&manifest)?;
    let groups: Vec<Vec<usize>> = m.by_identity().into_values().filter(|v| v.len() > 1).collect();
    let mut imgs = Vec::new();
    let mut srcs = Vec::new();
    let depth = groups.iter().map(|g| g.len() - 1).max().unwrap_or(0);
    'outer: for k in 1..=depth {
        for g in &groups {
            if imgs.len() >= run.pairs {
                break 'outer;
            }
            if let Some(&other) = g.get(k) {
                let (a, b) = (&m.records[g[0]], &m.records[other]);
                imgs.push((m.load_image(a, run.resolution)?, m.load_image(b, run.resolution)?));
                srcs.push(format!("{}|{}", a.image_path.display(), b.image_path.display()));
            }
        }
    }
    if imgs.is_empty() {
        bail!("manifest has no identity with two or more images");
    }
    let (bank, outcomes) = build_homography_bank(&imgs, &srcs, &run.bank)?;
    write_resolved(&common.out, &run)?;
    bank.save(common.out.join("bank.json"))?;
    let mut csv = String::from("pair,outcome,detail\n");
    for (s, o) in srcs.iter().zip(&outcomes) {
        let (kind, detail) = match o {
            PairOutcome::Accepted { entry } => ("accepted", entry.to_string()),
            PairOutcome::TooFewMatches(n) => ("too-few-matches", n.to_string()),
            PairOutcome::NoConsensus => ("no-consensus", String::new()),
            PairOutcome::TooFewInliers(n) => ("too-few-inliers", n.to_string()),
            PairOutcome::TooLarge(d) => ("too-large", format!("{d:.3}")),
        };
        csv.push_str(&format!("{s},{kind},{detail}\n"));
    }
    std::fs::write(common.out.join("pairs.csv"), csv)?;
    println!("bank: {} of {} pairs accepted", bank.len(), outcomes.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synthesize(
    common: Common,
    s1: PathBuf,
    s2: PathBuf,
    bank: PathBuf,
    matcher: Option<PathBuf>,
    n_ids: Option<usize>,
    renders: Option<usize>,
) -> Result<()> {
    let mut cfg: CorpusConfig = load_config(common.config.as_deref())?;
    set(&mut cfg.n_ids, n_ids);
    set(&mut cfg.renders_per_id, renders);
    set(&mut cfg.seed, common.seed);
    let (p1, sch1) = load_model(&s1)?;
    let (p2, sch2) = load_model(&s2)?;
    let bank = HomographyBank::load(&bank)?;
    let matcher = matcher.map(MatcherModel::load).transpose()?;
    let models = CorpusModels { stage1: &p1, stage1_schedule: &sch1, stage2: &p2, stage2_schedule: &sch2, bank: &bank, matcher: matcher.as_ref() };
    let m = build_corpus(&cfg, &models, &common.out)?;
    write_resolved(&common.out, &cfg)?;
    println!("{} records in {}", m.records.len(), common.out.display());
    Ok(())
}

#[derive(Serialize, serde::Deserialize, Default)]
#[serde(default)]
struct EvaluateRun {
    seed: u64,
    real_ids: Option<usize>,
    synth_ids: Option<usize>,
    utility: UtilityConfig,
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    common: Common,
    real: PathBuf,
    synth: PathBuf,
    tests: Vec<String>,
    real_ids: Option<usize>,
    synth_ids: Option<usize>,
    far: Option<f64>,
    protocol: Option<ProtocolArg>,
) -> Result<()> {
    let mut run: EvaluateRun = load_config(common.config.as_deref())?;
    set(&mut run.seed, common.seed);
    set(&mut run.utility.far, far);
    set(&mut run.utility.protocol, protocol.map(Into::into));
    if real_ids.is_some() {
        run.real_ids = real_ids;
    }
    if synth_ids.is_some() {
        run.synth_ids = synth_ids;
    }
    let real_m = DatasetManifest::load(&real)?;
    let synth_m = DatasetManifest::load(&synth)?;
    let mut test_sets = Vec::new();
    for t in &tests {
        let (name, path) = t.split_once('=').with_context(|| format!("--test expects NAME=FILE, got '{t}'"))?;
        test_sets.push((name.to_string(), DatasetManifest::load(path)?));
    }
    let nr = run.real_ids.unwrap_or(real_m.identities().len());
    let ns = run.synth_ids.unwrap_or(synth_m.identities().len());
    run.real_ids = Some(nr);
    run.synth_ids = Some(ns);
    let report = utility_experiment(&real_m, &synth_m, &TrainConfiguration::standard(nr, ns), &test_sets, &run.utility, run.seed)?;
    write_resolved(&common.out, &run)?;
    std::fs::write(common.out.join("report.csv"), report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn report(common: Common, matcher: PathBuf, manifest: PathBuf, far: Option<f64>, protocol: Option<ProtocolArg>, bins: Option<usize>, plot: bool) -> Result<()> {
    #[derive(Serialize, serde::Deserialize)]
    #[serde(default)]
    struct ReportRun {
        far: f64,
        protocol: Protocol,
        bins: usize,
        plot: bool,
    }
    impl Default for ReportRun {
        fn default() -> Self {
            Self { far: 1e-4, protocol: Protocol::AllPairs, bins: 40, plot: false }
        }
    }
    let mut run: ReportRun = load_config(common.config.as_deref())?;
    set(&mut run.far, far);
    set(&mut run.protocol, protocol.map(Into::into));
    set(&mut run.bins, bins);
    run.plot |= plot;
    if run.bins == 0 {
        bail!("--bins must be >= 1");
    }
    let model = MatcherModel::load(&matcher)?;
    let m = DatasetManifest::load(&manifest)?;
    let scores = score_distributions(&model, &m, run.protocol)?;
    let op = tar_at_far(&scores, run.far)?;
    let overlap = overlap_coefficient(&scores, run.bins);
    write_resolved(&common.out, &run)?;
    let out = &common.out;
    std::fs::write(out.join("scores.csv"), scores.to_csv())?;
    std::fs::write(out.join("histogram.csv"), histogram_csv(&scores, run.bins))?;
    let images = m.records.iter().map(|r| m.load_image(r, model.cfg.resolution)).collect::<palmforge::Result<Vec<_>>>()?;
    let emb = model.embed_all(&images)?;
    let points: Vec<Vec<f64>> = emb.iter().map(|e| e.vector.clone()).collect();
    let labels: Vec<u64> = m.records.iter().map(|r| r.identity_id).collect();
    let mut proj = String::from("x,y,identity_id\n");
    for (x, y, l) in project_2d(&points, &labels)? {
        proj.push_str(&format!("{x},{y},{l}\n"));
    }
    std::fs::write(out.join("projection.csv"), proj)?;
    let summary = serde_json::json!({
        "protocol": scores.protocol_id,
        "genuine": scores.genuine.len(),
        "imposter": scores.imposter.len(),
        "far": run.far,
        "tar": op.tar,
        "threshold": if op.threshold.is_finite() { serde_json::json!(op.threshold) } else { serde_json::json!("inf") },
        "overlap": overlap,
    });
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    if run.plot {
        std::fs::write(out.join("histogram.svg"), histogram_svg(&scores, run.bins, &format!("genuine vs imposter ({})", scores.protocol_id)))?;
    }
    println!("TAR {:.4} at FAR {} (threshold {}), overlap {:.3}", op.tar, run.far, op.threshold, overlap);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.cmd {
        Command::GenCorpus { common, n, images_per_id, first_id, resolution } => gen_corpus(common, n, images_per_id, first_id, resolution),
        Command::Train { common, stage, manifest, init, resume, steps, batch_size, timesteps, schedule, ckpt_every } => {
            cmd_train(common, stage, manifest, init, resume, steps, batch_size, timesteps, schedule, ckpt_every)
        }
        Command::BuildBank { common, manifest, pairs } => build_bank(common, manifest, pairs),
        Command::Synthesize { common, stage1, stage2, bank, matcher, n_ids, renders } => synthesize(common, stage1, stage2, bank, matcher, n_ids, renders),
        Command::Evaluate { common, real, synth, tests, real_ids, synth_ids, far, protocol } => {
            evaluate(common, real, synth, tests, real_ids, synth_ids, far, protocol)
        }
        Command::Report { common, matcher, manifest, far, protocol, bins, plot } => report(common, matcher, manifest, far, protocol, bins, plot),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
