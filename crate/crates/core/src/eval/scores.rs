use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::matcher::{identity_key, match_score, Embedding, MatcherModel};
use crate::error::{Error, Result};
use crate::pipeline::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Every unordered pair of images.
    AllPairs,
    /// The first image of each identity is its gallery entry; every other
    /// image is a probe against every gallery entry.
    FirstVsRest,
}

impl Protocol {
    pub fn id(&self) -> &'static str {
        match self {
            Protocol::AllPairs => "all-pairs",
            Protocol::FirstVsRest => "first-vs-rest",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-pairs" => Ok(Protocol::AllPairs),
            "first-vs-rest" => Ok(Protocol::FirstVsRest),
            other => Err(Error::invalid(format!("unknown protocol '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
    pub protocol_id: String,
}

impl ScoreSet {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,score\n");
        for g in &self.genuine {
            let _ = writeln!(s, "G,{g}");
        }
        for i in &self.imposter {
            let _ = writeln!(s, "I,{i}");
        }
        s
    }

    pub fn from_csv(text: &str, protocol_id: &str) -> Result<Self> {
        let mut out = ScoreSet { genuine: Vec::new(), imposter: Vec::new(), protocol_id: protocol_id.into() };
        for (n, line) in text.lines().enumerate().skip(1) {
            let bad = || Error::Format(format!("score csv line {}: '{line}'", n + 1));
            let (label, score) = line.split_once(',').ok_or_else(bad)?;
            let v: f64 = score.trim().parse().map_err(|_| bad())?;
            match label.trim() {
                "G" => out.genuine.push(v),
                "I" => out.imposter.push(v),
                _ => return Err(bad()),
            }
        }
        Ok(out)
    }
}

/// Genuine/imposter scores among embeddings labeled by identity. Pairs are
/// enumerated in index order.
pub fn score_distributions_from<L: PartialEq>(emb: &[Embedding], labels: &[L], protocol: Protocol) -> Result<ScoreSet> {
    if emb.len() != labels.len() {
        return Err(Error::invalid("one label per embedding is required"));
    }
    let mut distinct: Vec<&L> = Vec::new();
    for l in labels {
        if !distinct.contains(&l) {
            distinct.push(l);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::invalid("score distributions need at least two identities"));
    }
    let mut set = ScoreSet { genuine: Vec::new(), imposter: Vec::new(), protocol_id: protocol.id().into() };
    match protocol {
        Protocol::AllPairs => {
            for i in 0..emb.len() {
                for j in i + 1..emb.len() {
                    let s = match_score(&emb[i], &emb[j]);
                    if labels[i] == labels[j] { set.genuine.push(s) } else { set.imposter.push(s) }
                }
            }
        }
        Protocol::FirstVsRest => {
            let gallery: Vec<usize> = distinct.iter().map(|d| labels.iter().position(|l| l == *d).expect("present")).collect();
            for (p, pl) in labels.iter().enumerate() {
                if gallery.contains(&p) {
                    continue;
                }
                for &g in &gallery {
                    let s = match_score(&emb[g], &emb[p]);
                    if labels[g] == *pl { set.genuine.push(s) } else { set.imposter.push(s) }
                }
            }
        }
    }
    Ok(set)
}

pub fn score_distributions(model: &MatcherModel, manifest: &DatasetManifest, protocol: Protocol) -> Result<ScoreSet> {
    let images = manifest.records.iter().map(|r| manifest.load_image(r, model.cfg.resolution)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<_> = manifest.records.iter().map(|r| identity_key(r.source, r.identity_id)).collect();
    score_distributions_from(&model.embed_all(&images)?, &labels, protocol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TarAtFar {
    pub tar: f64,
    /// `f64::INFINITY` when no observed score meets the target.
    pub threshold: f64,
}

/// Smallest observed score (genuine or imposter, else +∞) whose imposter
/// acceptance fraction `#{imposter ≥ t} / #imposter` is at most
/// `far_target`, and the genuine acceptance `#{genuine ≥ t} / #genuine`.
pub fn tar_at_far(scores: &ScoreSet, far_target: f64) -> Result<TarAtFar> {
    if scores.genuine.is_empty() || scores.imposter.is_empty() {
        return Err(Error::invalid("tar_at_far needs genuine and imposter scores"));
    }
    if !(far_target > 0.0 && far_target < 1.0) {
        return Err(Error::invalid(format!("far target {far_target} outside (0, 1)")));
    }
    if scores.genuine.iter().chain(&scores.imposter).any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut imp = scores.imposter.clone();
    imp.sort_by(|a, b| b.total_cmp(a));
    let mut cand: Vec<f64> = scores.genuine.iter().chain(&scores.imposter).copied().collect();
    cand.sort_by(|a, b| b.total_cmp(a));
    cand.dedup();
    let n = imp.len() as f64;
    let mut threshold = f64::INFINITY;
    let mut above = 0;
    for v in cand {
        while above < imp.len() && imp[above] >= v {
            above += 1;
        }
        if above as f64 / n <= far_target {
            threshold = v;
        } else {
            break;
        }
    }
    let accepted = scores.genuine.iter().filter(|g| **g >= threshold).count();
    Ok(TarAtFar { tar: accepted as f64 / scores.genuine.len() as f64, threshold })
}

/// Normalized histogram over `[lo, hi]` with `bins` equal bins (values
/// outside the range land in the edge bins).
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    if values.is_empty() || bins == 0 {
        return h;
    }
    let w = (hi - lo) / bins as f64;
    for v in values {
        let b = (((v - lo) / w).floor().max(0.0) as usize).min(bins - 1);
        h[b] += 1.0;
    }
    h.iter_mut().for_each(|c| *c /= values.len() as f64);
    h
}

/// Histogram overlap coefficient of the genuine and imposter distributions:
/// sum over bins of the smaller normalized mass, in `[0, 1]`.
pub fn overlap_coefficient(scores: &ScoreSet, bins: usize) -> f64 {
    let g = histogram(&scores.genuine, bins, -1.0, 1.0);
    let i = histogram(&scores.imposter, bins, -1.0, 1.0);
    g.iter().zip(&i).map(|(a, b)| a.min(*b)).sum()
}

/// `bin_lo,bin_hi,genuine,imposter` rows over `[-1, 1]`.
pub fn histogram_csv(scores: &ScoreSet, bins: usize) -> String {
    let g = histogram(&scores.genuine, bins, -1.0, 1.0);
    let i = histogram(&scores.imposter, bins, -1.0, 1.0);
    let w = 2.0 / bins as f64;
    let mut s = String::from("bin_lo,bin_hi,genuine,imposter\n");
    for b in 0..bins {
        let _ = writeln!(s, "{},{},{},{}", -1.0 + w * b as f64, -1.0 + w * (b + 1) as f64, g[b], i[b]);
    }
    s
}

/// Overlaid genuine (green) and imposter (red) histograms as standalone SVG.
pub fn histogram_svg(scores: &ScoreSet, bins: usize, title: &str) -> String {
    let (w, h, pad) = (480.0, 300.0, 40.0);
    let g = histogram(&scores.genuine, bins, -1.0, 1.0);
    let i = histogram(&scores.imposter, bins, -1.0, 1.0);
    let peak = g.iter().chain(&i).cloned().fold(1e-9, f64::max);
    let bw = (w - 2.0 * pad) / bins as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, xml_escape(title));
    for (series, color) in [(&g, "#2a9d3a"), (&i, "#c8352c")] {
        for (b, v) in series.iter().enumerate() {
            let bh = v / peak * (h - 2.0 * pad);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                pad + bw * b as f64,
                h - pad - bh,
                bw,
                bh
            );
        }
    }
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, h - pad, w - pad);
    for (x, label) in [(pad, "-1"), (w / 2.0, "0"), (w - pad, "1")] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{label}</text>"#, h - pad + 15.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" fill="{}">genuine</text>"#, w - pad - 60.0, pad, "#2a9d3a");
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" fill="{}">imposter</text>"#, w - pad - 60.0, pad + 14.0, "#c8352c");
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Per-identity margin `mean same-identity score − mean cross-identity
/// score`, averaged over identities, with a percentile bootstrap interval
/// from resampling identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginBootstrap {
    pub mean_genuine: f64,
    pub mean_imposter: f64,
    pub margin: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

pub fn identity_margin_bootstrap<L: Ord + Clone>(emb: &[Embedding], labels: &[L], resamples: usize, level: f64, seed: u64) -> Result<MarginBootstrap> {
    use rand::Rng as _;
    if emb.len() != labels.len() {
        return Err(Error::invalid("one label per embedding is required"));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("need resamples >= 1 and level in (0, 1)"));
    }
    let ids: Vec<L> = labels.iter().cloned().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    if ids.len() < 2 {
        return Err(Error::invalid("bootstrap needs at least two identities"));
    }
    let (mut gs, mut is) = (Vec::new(), Vec::new());
    for id in &ids {
        let (mut g, mut gn, mut im, mut imn) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..emb.len() {
            if labels[i] != *id {
                continue;
            }
            for j in 0..emb.len() {
                if i == j {
                    continue;
                }
                let s = match_score(&emb[i], &emb[j]);
                if labels[j] == *id {
                    g += s;
                    gn += 1;
                } else {
                    im += s;
                    imn += 1;
                }
            }
        }
        if gn == 0 {
            return Err(Error::invalid("every identity needs at least two images"));
        }
        gs.push(g / gn as f64);
        is.push(im / imn as f64);
    }
    let n = ids.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let diffs: Vec<f64> = gs.iter().zip(&is).map(|(g, i)| g - i).collect();
    let mut r = crate::rng::stream(seed, crate::rng::Domain::General, 0xB007, 0);
    let mut boots: Vec<f64> = (0..resamples).map(|_| (0..n).map(|_| diffs[r.gen_range(0..n)]).sum::<f64>() / n as f64).collect();
    boots.sort_by(f64::total_cmp);
    let q = |p: f64| boots[((p * resamples as f64).floor() as usize).min(resamples - 1)];
    let tail = (1.0 - level) / 2.0;
    Ok(MarginBootstrap { mean_genuine: mean(&gs), mean_imposter: mean(&is), margin: mean(&diffs), lo: q(tail), hi: q(1.0 - tail), level })
}
