use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::matcher::{identity_key, train_matcher_on, MatcherConfig};
use super::scores::{score_distributions_from, tar_at_far, Protocol};
use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::pipeline::DatasetManifest;

/// Identity key: `(synthetic, identity_id)`.
pub type IdKey = (bool, u64);

/// Images tagged with identity keys.
#[derive(Debug, Clone, Default)]
pub struct LabeledImages {
    pub images: Vec<Image>,
    pub keys: Vec<IdKey>,
}

impl LabeledImages {
    pub fn from_manifest(m: &DatasetManifest, res: usize) -> Result<Self> {
        let mut out = Self::default();
        for r in &m.records {
            out.images.push(m.load_image(r, res)?);
            out.keys.push(identity_key(r.source, r.identity_id));
        }
        Ok(out)
    }

    pub fn identities(&self) -> BTreeSet<IdKey> {
        self.keys.iter().copied().collect()
    }

    /// All images of the `n` smallest identity keys.
    pub fn first_identities(&self, n: usize) -> Result<Self> {
        let ids: BTreeSet<IdKey> = self.identities().into_iter().take(n).collect();
        if ids.len() < n {
            return Err(Error::InsufficientData(format!("asked for {n} identities, only {} available", ids.len())));
        }
        let mut out = Self::default();
        for (img, k) in self.images.iter().zip(&self.keys) {
            if ids.contains(k) {
                out.images.push(img.clone());
                out.keys.push(*k);
            }
        }
        Ok(out)
    }
}

/// One training-data configuration (a row of the report).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfiguration {
    pub name: String,
    pub real_ids: usize,
    pub synth_ids: usize,
}

impl TrainConfiguration {
    pub fn new(name: &str, real_ids: usize, synth_ids: usize) -> Self {
        Self { name: name.into(), real_ids, synth_ids }
    }

    /// Real only, synthetic only and combined.
    pub fn standard(real_ids: usize, synth_ids: usize) -> Vec<Self> {
        vec![Self::new("real", real_ids, 0), Self::new("synthetic", 0, synth_ids), Self::new("real+synthetic", real_ids, synth_ids)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityConfig {
    pub matcher: MatcherConfig,
    pub far: f64,
    pub protocol: Protocol,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self { matcher: MatcherConfig::default(), far: 1e-4, protocol: Protocol::AllPairs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityRow {
    pub config: TrainConfiguration,
    pub tars: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub far: f64,
    pub seed: u64,
    pub test_names: Vec<String>,
    pub rows: Vec<UtilityRow>,
}

impl UtilityReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("configuration,real_ids,synth_ids");
        for t in &self.test_names {
            let _ = write!(s, ",{t}");
        }
        s.push_str(",average\n");
        for r in &self.rows {
            let _ = write!(s, "{},{},{}", r.config.name, r.config.real_ids, r.config.synth_ids);
            for t in &r.tars {
                let _ = write!(s, ",{t}");
            }
            let _ = writeln!(s, ",{}", r.average);
        }
        s
    }

    pub fn row(&self, name: &str) -> Option<&UtilityRow> {
        self.rows.iter().find(|r| r.config.name == name)
    }
}

/// Trains one matcher per configuration and reports TAR at `cfg.far` on
/// every test set. Train and test identities must be disjoint.
pub fn utility_experiment_on(
    real: &LabeledImages,
    synth: &LabeledImages,
    configs: &[TrainConfiguration],
    tests: &[(String, LabeledImages)],
    cfg: &UtilityConfig,
    seed: u64,
) -> Result<UtilityReport> {
    if configs.is_empty() || tests.is_empty() {
        return Err(Error::invalid("need at least one configuration and one test set"));
    }
    let mut train_sets = Vec::with_capacity(configs.len());
    let mut used: BTreeSet<IdKey> = BTreeSet::new();
    for c in configs {
        if c.real_ids + c.synth_ids == 0 {
            return Err(Error::invalid(format!("configuration '{}' has no identities", c.name)));
        }
        let r = real.first_identities(c.real_ids)?;
        let s = synth.first_identities(c.synth_ids)?;
        used.extend(r.identities());
        used.extend(s.identities());
        train_sets.push((r, s));
    }
    for (name, t) in tests {
        let shared: Vec<IdKey> = t.identities().intersection(&used).copied().collect();
        if !shared.is_empty() {
            return Err(Error::ProtocolViolation(format!("test set '{name}' shares {} identities with training, e.g. {:?}", shared.len(), shared[0])));
        }
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (c, (r, s)) in configs.iter().zip(train_sets) {
        let mut images = r.images;
        images.extend(s.images);
        let keys: Vec<IdKey> = r.keys.into_iter().chain(s.keys).collect();
        let dense: BTreeMap<IdKey, usize> = keys.iter().copied().collect::<BTreeSet<_>>().into_iter().enumerate().map(|(i, k)| (k, i)).collect();
        let labels: Vec<usize> = keys.iter().map(|k| dense[k]).collect();
        let model = train_matcher_on(&images, &labels, &cfg.matcher, seed)?;
        let mut tars = Vec::with_capacity(tests.len());
        for (_, t) in tests {
            let scores = score_distributions_from(&model.embed_all(&t.images)?, &t.keys, cfg.protocol)?;
            tars.push(tar_at_far(&scores, cfg.far)?.tar);
        }
        let average = tars.iter().sum::<f64>() / tars.len() as f64;
        rows.push(UtilityRow { config: c.clone(), tars, average });
    }
    Ok(UtilityReport { far: cfg.far, seed, test_names: tests.iter().map(|(n, _)| n.clone()).collect(), rows })
}

pub fn utility_experiment(
    real: &DatasetManifest,
    synth: &DatasetManifest,
    configs: &[TrainConfiguration],
    tests: &[(String, DatasetManifest)],
    cfg: &UtilityConfig,
    seed: u64,
) -> Result<UtilityReport> {
    let res = cfg.matcher.resolution;
    let tests = tests.iter().map(|(n, m)| Ok((n.clone(), LabeledImages::from_manifest(m, res)?))).collect::<Result<Vec<_>>>()?;
    utility_experiment_on(&LabeledImages::from_manifest(real, res)?, &LabeledImages::from_manifest(synth, res)?, configs, &tests, cfg, seed)
}
