//! Config-driven orchestration behind the `xkd` subcommands.
//!
//! A run directory holds one subdirectory per command (`teacher`, `distill`,
//! `evaluate`, `explain`), each with the resolved config it ran under, and a
//! `data` directory when the dataset is synthetic.

mod commands;
mod config;
mod explain_cmd;

use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::data::{generate_synthetic, load_boxes, scan_folder, BoundingBox, DatasetManifest, LoadedSplit, SplitRole};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Classifier, ConvNet, InputShape, ToyConfig};

pub use commands::{
    cmd_distill, cmd_evaluate, cmd_gen_synthetic, cmd_train_teacher, DistillRun, DistillSummary, EvaluateRun, PhaseRun,
};
pub use config::{
    DatasetConfig, ExplainConfig, ModelConfig, Overrides, RunConfig, DEFAULT_IMAGE_SIZE, OUTPUT_ROOT_ENV,
};
pub use explain_cmd::{cmd_explain, AlignmentSummary, ExplainReport, ExplainRun, ImageError, ImageRecord, ModelSummary};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TEACHER_CHECKPOINT: &str = "teacher.ckpt";

/// A validated config bound to an output directory and a scanned dataset.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: RunConfig,
    pub out: PathBuf,
    pub manifest: DatasetManifest,
}

impl Workspace {
    /// Validates `config`, materializes a synthetic dataset under
    /// `<out>/data` if requested, and scans the dataset.
    pub fn open(mut config: RunConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        config.output_dir = Some(out.to_path_buf());
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let ds = &config.dataset;
        let manifest = match (&ds.root, &ds.synthetic) {
            (Some(root), _) => scan_folder(root, ds.split, ds.seed)?,
            (None, Some(spec)) => {
                let data = out.join("data");
                if data.exists() {
                    fs::remove_dir_all(&data).map_err(|e| Error::io(&data, e))?;
                }
                info!("generating synthetic dataset in {}", data.display());
                generate_synthetic(spec, &data, ds.split, ds.seed)?
            }
            (None, None) => unreachable!("validated"),
        };
        info!(
            "dataset: {} classes, {} images, manifest {}",
            manifest.num_classes(),
            manifest.items.len(),
            &manifest.content_hash[..12]
        );
        Ok(Self {
            config,
            out: out.to_path_buf(),
            manifest,
        })
    }

    pub fn input_shape(&self) -> InputShape {
        self.config.dataset.input_shape()
    }

    pub fn toy_config(&self) -> ToyConfig {
        ToyConfig {
            input: self.input_shape(),
            num_classes: self.manifest.num_classes(),
            dropout: self.config.distill.dropout,
        }
    }

    pub fn load_split(&self, role: SplitRole) -> Result<LoadedSplit> {
        LoadedSplit::load(&self.manifest.split(role), self.input_shape(), self.config.dataset.preload)
    }

    /// Ground-truth boxes when the dataset carries a boxes sidecar.
    pub fn boxes(&self) -> Result<Option<std::collections::BTreeMap<String, BoundingBox>>> {
        load_boxes(&self.manifest.root)
    }

    /// Creates `<out>/<name>` and writes the resolved config and manifest
    /// into it.
    pub fn phase_dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.config.save(&dir.join(RESOLVED_CONFIG))?;
        self.manifest.save(&dir.join(MANIFEST_FILE))?;
        Ok(dir)
    }

    /// Loads a checkpoint and checks it against this dataset.
    pub fn load_checkpoint(&self, path: &Path) -> Result<ConvNet> {
        let model = Checkpoint::load(path)?.into_model()?;
        if model.num_classes() != self.manifest.num_classes() {
            return Err(Error::ClassMismatch {
                model: model.num_classes(),
                data: self.manifest.num_classes(),
            });
        }
        if model.input_shape() != self.input_shape() {
            return Err(Error::config(
                "dataset.image_size",
                format!(
                    "checkpoint {} expects input {}, dataset yields {}",
                    path.display(),
                    model.input_shape(),
                    self.input_shape()
                ),
            ));
        }
        Ok(model)
    }
}

/// File stems of `paths`, suffixed `_2`, `_3`, … where they collide.
pub(crate) fn unique_labels(paths: &[PathBuf]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(paths.len());
    for p in paths {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
        let mut label = stem.clone();
        let mut n = 2;
        while out.contains(&label) {
            label = format!("{stem}_{n}");
            n += 1;
        }
        out.push(label);
    }
    out
}
