//! Synthetic "blob" images whose class is the region the blob sits in.
//!
//! The frame is tiled into a `ceil(√C)`-column grid of cells; class `k` owns
//! cell `k`. Each image holds one Gaussian blob whose whole bounding box lies
//! inside its class cell, on a dim background with seeded Gaussian noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::manifest::{scan_folder, DatasetManifest, SplitPolicy};
use crate::error::{Error, Result};

pub const BOXES_FILE: &str = "boxes.json";

const BACKGROUND: f64 = 0.1;
const PEAK: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub num_classes: usize,
    pub blob_radius: usize,
    pub noise: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 32,
            num_classes: 3,
            blob_radius: 4,
            noise: 0.05,
            per_class: 150,
            seed: 0,
        }
    }
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

impl SyntheticSpec {
    fn grid(&self) -> (usize, usize) {
        let cols = (self.num_classes as f64).sqrt().ceil() as usize;
        let rows = self.num_classes.div_ceil(cols);
        (cols, rows)
    }

    fn cell_size(&self) -> (usize, usize) {
        let (cols, rows) = self.grid();
        (self.image_size / cols, self.image_size / rows)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("dataset.synthetic.num_classes", "need at least 2 classes"));
        }
        if self.per_class == 0 {
            return Err(Error::config("dataset.synthetic.per_class", "must be >= 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("dataset.synthetic.noise", "must be finite and >= 0"));
        }
        let (cw, ch) = self.cell_size();
        let span = 2 * self.blob_radius + 1;
        if span > cw || span > ch {
            return Err(Error::config(
                "dataset.synthetic.blob_radius",
                format!(
                    "blob of radius {} does not fit the {cw}×{ch} class region of a {1}×{1} frame",
                    self.blob_radius,
                    self.image_size
                ),
            ));
        }
        Ok(())
    }

    /// Pixel rectangle `(x0, y0, width, height)` owned by `class`.
    pub fn class_region(&self, class: usize) -> (usize, usize, usize, usize) {
        let (cols, _) = self.grid();
        let (cw, ch) = self.cell_size();
        ((class % cols) * cw, (class / cols) * ch, cw, ch)
    }
}

/// Draws one image of `class`.
pub fn render_sample<R: Rng>(spec: &SyntheticSpec, class: usize, rng: &mut R) -> (GrayImage, BoundingBox) {
    let r = spec.blob_radius;
    let (rx, ry, cw, ch) = spec.class_region(class);
    let cx = rng.random_range(rx + r..=rx + cw - 1 - r);
    let cy = rng.random_range(ry + r..=ry + ch - 1 - r);
    let sigma = (r as f64 / 2.0).max(0.5);
    let size = spec.image_size as u32;
    let mut img = GrayImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let d2 = (x as f64 - cx as f64).powi(2) + (y as f64 - cy as f64).powi(2);
            let mut v = BACKGROUND + PEAK * (-d2 / (2.0 * sigma * sigma)).exp();
            if spec.noise > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                v += spec.noise * z;
            }
            img.put_pixel(x, y, Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]));
        }
    }
    let bbox = BoundingBox {
        x0: cx - r,
        y0: cy - r,
        x1: cx + r,
        y1: cy + r,
    };
    (img, bbox)
}

/// Writes the dataset to `root/class_<k>/img_<i>.png` plus a `boxes.json`
/// sidecar, then scans it like any other folder dataset.
pub fn generate_synthetic(spec: &SyntheticSpec, root: &Path, policy: SplitPolicy, split_seed: u64) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut boxes = BTreeMap::new();
    for class in 0..spec.num_classes {
        let name = format!("class_{class}");
        let dir = root.join(&name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..spec.per_class {
            let (img, bbox) = render_sample(spec, class, &mut rng);
            let file = format!("img_{i:04}.png");
            let path = dir.join(&file);
            img.save(&path).map_err(|e| Error::Dataset(format!("writing {}: {e}", path.display())))?;
            boxes.insert(format!("{name}/{file}"), bbox);
        }
    }
    let boxes_path = root.join(BOXES_FILE);
    fs::write(&boxes_path, serde_json::to_string_pretty(&boxes)?).map_err(|e| Error::io(&boxes_path, e))?;
    scan_folder(root, policy, split_seed)
}

/// Ground-truth boxes keyed by dataset-relative path, if the sidecar exists.
pub fn load_boxes(root: &Path) -> Result<Option<BTreeMap<String, BoundingBox>>> {
    let path = root.join(BOXES_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}
