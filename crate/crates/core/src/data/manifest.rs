use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IMAGE_EXTENSIONS;
use crate::error::{Error, Result};

/// Train/val/test percentages. Per class, `val = ⌊n·val/100⌋`,
/// `test = ⌊n·test/100⌋`, and the remainder goes to train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SplitPolicy {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitPolicy {
    pub const P65_15_20: SplitPolicy = SplitPolicy {
        train: 65.0,
        val: 15.0,
        test: 20.0,
    };
    pub const P70_10_20: SplitPolicy = SplitPolicy {
        train: 70.0,
        val: 10.0,
        test: 20.0,
    };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let p = Self { train, val, test };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("dataset.split", "percentages must be finite and >= 0"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 100.0).abs() > 1e-9 {
            return Err(Error::config("dataset.split", format!("percentages sum to {sum}, not 100")));
        }
        Ok(())
    }

    /// `(train, val, test)` item counts for a class of `n` items.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let val = (n as f64 * self.val / 100.0).floor() as usize;
        let test = (n as f64 * self.test / 100.0).floor() as usize;
        (n - val - test, val, test)
    }
}

impl fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.train, self.val, self.test)
    }
}

impl FromStr for SplitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split('/')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config("dataset.split", format!("`{s}` is not of the form train/val/test")))?;
        match parts.as_slice() {
            [a, b, c] => SplitPolicy::new(*a, *b, *c),
            _ => Err(Error::config("dataset.split", format!("`{s}` must have three parts"))),
        }
    }
}

impl TryFrom<String> for SplitPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SplitPolicy> for String {
    fn from(p: SplitPolicy) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub class: usize,
    pub split: SplitRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    /// Ordered by class, then file name.
    pub items: Vec<ManifestItem>,
    pub policy: SplitPolicy,
    pub split_seed: u64,
    /// Files skipped because they could not be decoded or have an
    /// unsupported extension.
    pub excluded: Vec<String>,
    /// SHA-256 over class names, file list, file bytes, policy, and seed.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitItem {
    pub path: PathBuf,
    pub rel_path: String,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub role: SplitRole,
    pub class_names: Vec<String>,
    pub items: Vec<SplitItem>,
}

impl DatasetSplit {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, role: SplitRole) -> DatasetSplit {
        DatasetSplit {
            role,
            class_names: self.class_names.clone(),
            items: self
                .items
                .iter()
                .filter(|i| i.split == role)
                .map(|i| SplitItem {
                    path: self.root.join(&i.path),
                    rel_path: i.path.clone(),
                    class: i.class,
                })
                .collect(),
        }
    }

    pub fn count(&self, role: SplitRole, class: usize) -> usize {
        self.items.iter().filter(|i| i.split == role && i.class == class).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Scans `root/<class>/*.{png,jpg,jpeg,bmp}` and assigns every decodable
/// image to exactly one split, stratified per class.
pub fn scan_folder(root: &Path, policy: SplitPolicy, seed: u64) -> Result<DatasetManifest> {
    policy.validate()?;
    if !root.is_dir() {
        return Err(Error::config("dataset.root", format!("{} is not a directory", root.display())));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!("{} has no class subdirectories", root.display())));
    }

    let mut hasher = Sha256::new();
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut per_class: Vec<Vec<String>> = Vec::with_capacity(class_dirs.len());
    let mut excluded = Vec::new();

    for dir in &class_dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_file()).collect();
        let checked: Vec<(String, Option<Vec<u8>>)> = files
            .par_iter()
            .map(|path| {
                let rel = format!("{name}/{}", path.file_name().and_then(|n| n.to_str()).unwrap_or_default());
                if !has_image_extension(path) {
                    return Ok((rel, None));
                }
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                let ok = image::ImageReader::new(Cursor::new(&bytes))
                    .with_guessed_format()
                    .ok()
                    .and_then(|r| r.into_dimensions().ok())
                    .is_some_and(|(w, h)| w > 0 && h > 0);
                Ok((rel, ok.then_some(bytes)))
            })
            .collect::<Result<_>>()?;

        let mut kept = Vec::new();
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        for (rel, bytes) in checked {
            match bytes {
                Some(bytes) => {
                    hasher.update(rel.as_bytes());
                    hasher.update([0u8]);
                    hasher.update((bytes.len() as u64).to_le_bytes());
                    hasher.update(&bytes);
                    kept.push(rel);
                }
                None => {
                    warn!("excluding {rel}: not a decodable png/jpeg/bmp image");
                    excluded.push(rel);
                }
            }
        }
        if kept.is_empty() {
            return Err(Error::Dataset(format!("class directory `{name}` has no decodable images")));
        }
        class_names.push(name);
        per_class.push(kept);
    }

    hasher.update(policy.to_string().as_bytes());
    hasher.update(seed.to_le_bytes());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for (class, files) in per_class.into_iter().enumerate() {
        let (_, n_val, n_test) = policy.counts(files.len());
        let mut order: Vec<usize> = (0..files.len()).collect();
        order.shuffle(&mut rng);
        let mut roles = vec![SplitRole::Train; files.len()];
        for &i in &order[..n_val] {
            roles[i] = SplitRole::Val;
        }
        for &i in &order[n_val..n_val + n_test] {
            roles[i] = SplitRole::Test;
        }
        items.extend(files.into_iter().zip(roles).map(|(path, split)| ManifestItem { path, class, split }));
    }

    Ok(DatasetManifest {
        root: root.to_path_buf(),
        class_names,
        items,
        policy,
        split_seed: seed,
        excluded,
        content_hash: hex::encode(hasher.finalize()),
    })
}
