use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::io::{load_png, LoadOptions};
use crate::imagecore::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    RealAnalog,
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub identity_id: u64,
    /// Relative to the manifest's directory unless absolute.
    pub image_path: PathBuf,
    pub source: Source,
    /// Quality token index; `None` until a matcher has labeled the image.
    pub quality_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homography_index: Option<usize>,
    pub seed: u64,
}

/// Corpus bookkeeping, stored as JSON lines next to the images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory that relative image paths resolve against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { records: Vec::new(), root: root.into() }
    }

    pub fn resolve(&self, rec: &ManifestRecord) -> PathBuf {
        if rec.image_path.is_absolute() {
            rec.image_path.clone()
        } else {
            self.root.join(&rec.image_path)
        }
    }

    pub fn load_image(&self, rec: &ManifestRecord, res: usize) -> Result<Image> {
        let img = load_png(self.resolve(rec), LoadOptions::default())?;
        if img.width() != res || img.height() != res {
            return Err(Error::Format(format!(
                "{} is {}x{}, expected {res}x{res}",
                rec.image_path.display(),
                img.width(),
                img.height()
            )));
        }
        Ok(img)
    }

    pub fn identities(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.identity_id).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Record indices grouped by identity, identities ascending, records in
    /// manifest order.
    pub fn by_identity(&self) -> BTreeMap<u64, Vec<usize>> {
        let mut map: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.identity_id).or_default().push(i);
        }
        map
    }

    pub fn filter(&self, keep: impl Fn(&ManifestRecord) -> bool) -> Self {
        Self { records: self.records.iter().filter(|r| keep(r)).cloned().collect(), root: self.root.clone() }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(line).map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?;
            records.push(rec);
        }
        Ok(Self { records, root: root.into() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads a manifest; relative image paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_jsonl(&text, root)
    }

    /// Referential integrity: every stage-two identity has a stage-one
    /// parent, and (optionally) every image exists at resolution `res`.
    pub fn validate(&self, check_images: Option<usize>) -> Result<()> {
        let parents: BTreeSet<u64> =
            self.records.iter().filter(|r| r.source == Source::Stage1).map(|r| r.identity_id).collect();
        for r in &self.records {
            if r.source == Source::Stage2 && !parents.contains(&r.identity_id) {
                return Err(Error::Format(format!("stage2 identity {} has no stage1 parent", r.identity_id)));
            }
            if let Some(res) = check_images {
                self.load_image(r, res)?;
            }
        }
        Ok(())
    }
}
