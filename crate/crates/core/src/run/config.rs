use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SplitPolicy, SplitRole, SyntheticSpec};
use crate::engine::DistillConfig;
use crate::error::{Error, Result};
use crate::loss::LossVariant;
use crate::model::{InputShape, TOY_STUDENT, TOY_TEACHER};

/// Environment variable naming the directory under which runs land when
/// neither the config nor the command line names an output directory.
pub const OUTPUT_ROOT_ENV: &str = "XKD_OUTPUT_ROOT";

/// Input edge length for folder datasets when `dataset.image_size` is unset.
pub const DEFAULT_IMAGE_SIZE: usize = 224;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Class-per-folder dataset root. Exclusive with `synthetic`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Generate a blob dataset into `<output>/data` instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    pub split: SplitPolicy,
    /// Seed of the stratified split.
    pub seed: u64,
    /// Square input size; defaults to the synthetic image size or 224.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_size: Option<usize>,
    pub channels: usize,
    /// Decode every image once up front instead of per batch.
    pub preload: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            root: None,
            synthetic: None,
            split: SplitPolicy::P65_15_20,
            seed: 0,
            image_size: None,
            channels: 3,
            preload: true,
        }
    }
}

impl DatasetConfig {
    pub fn input_shape(&self) -> InputShape {
        let size = self
            .image_size
            .or(self.synthetic.map(|s| s.image_size))
            .unwrap_or(DEFAULT_IMAGE_SIZE);
        InputShape::new(self.channels, size, size)
    }

    fn validate(&self) -> Result<()> {
        match (&self.root, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::config("dataset", "set only one of `dataset.root` and `dataset.synthetic`"));
            }
            (None, None) => {
                return Err(Error::config("dataset.root", "missing; set `dataset.root` or a `[dataset.synthetic]` table"));
            }
            (Some(root), None) if !root.is_dir() => {
                return Err(Error::config("dataset.root", format!("{} is not an existing directory", root.display())));
            }
            (None, Some(spec)) => spec.validate()?,
            _ => {}
        }
        self.split.validate()?;
        if self.channels == 0 {
            return Err(Error::config("dataset.channels", "must be >= 1"));
        }
        if self.image_size == Some(0) {
            return Err(Error::config("dataset.image_size", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub teacher: String,
    pub student: String,
    pub teacher_init_seed: u64,
    pub student_init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            teacher: TOY_TEACHER.into(),
            student: TOY_STUDENT.into(),
            teacher_init_seed: 1,
            student_init_seed: 2,
        }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        let known = [TOY_TEACHER, TOY_STUDENT];
        for (field, name) in [("model.teacher", &self.teacher), ("model.student", &self.student)] {
            if !known.contains(&name.as_str()) {
                return Err(Error::config(field, format!("unknown model `{name}`; known: {}", known.join(", "))));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    /// Capture layer; each model's last conv layer when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    /// Classes to explain for every image; the image's own label when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<usize>>,
    /// Number of images, spread evenly over the split.
    pub samples: usize,
    pub split: SplitRole,
    /// Masked inputs scored per forward pass.
    pub batch_size: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            layer: None,
            classes: None,
            samples: 50,
            split: SplitRole::Test,
            batch_size: 32,
        }
    }
}

impl ExplainConfig {
    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("explain.samples", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("explain.batch_size", "must be >= 1"));
        }
        if self.classes.as_ref().is_some_and(|c| c.is_empty()) {
            return Err(Error::config("explain.classes", "must not be empty when set"));
        }
        Ok(())
    }
}

/// Everything one run needs. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub distill: DistillConfig,
    pub explain: ExplainConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string().trim_end()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.distill.validate()?;
        self.explain.validate()
    }

    /// SHA-256 of the config with `output_dir` cleared, so the same
    /// experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("run config serializes")))
    }

    /// `output_dir` if set, else `$XKD_OUTPUT_ROOT/<config stem>`, else
    /// `runs/<config stem>`.
    pub fn resolve_output_dir(&self, config_path: Option<&Path>) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        let stem = config_path
            .and_then(|p| p.file_stem())
            .and_then(|s| s.to_str())
            .unwrap_or("run");
        root.join(stem)
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub dataset_root: Option<PathBuf>,
    pub split: Option<SplitPolicy>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub temperature: Option<f64>,
    pub variant: Option<LossVariant>,
    pub epochs_teacher: Option<usize>,
    pub epochs_student: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub layer: Option<String>,
    pub samples: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = Some(dir.clone());
        }
        if let Some(root) = &self.dataset_root {
            cfg.dataset.root = Some(root.clone());
            cfg.dataset.synthetic = None;
        }
        set(&mut cfg.dataset.split, &self.split);
        set(&mut cfg.distill.seed, &self.seed);
        set(&mut cfg.distill.alpha, &self.alpha);
        set(&mut cfg.distill.gamma, &self.gamma);
        set(&mut cfg.distill.temperature, &self.temperature);
        set(&mut cfg.distill.variant, &self.variant);
        set(&mut cfg.distill.epochs_teacher, &self.epochs_teacher);
        set(&mut cfg.distill.epochs_student, &self.epochs_student);
        set(&mut cfg.distill.batch_size, &self.batch_size);
        set(&mut cfg.distill.learning_rate, &self.learning_rate);
        set(&mut cfg.explain.samples, &self.samples);
        if let Some(layer) = &self.layer {
            cfg.explain.layer = Some(layer.clone());
        }
    }
}
