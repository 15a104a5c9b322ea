use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("labels are not one-hot in row {row}")]
    NotOneHot { row: usize },

    #[error("unknown layer `{layer}` for model `{model}`")]
    UnknownLayer { model: String, layer: String },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("model `{0}` is frozen; its parameters cannot receive gradients")]
    Frozen(String),

    #[error("teacher model `{0}` must be frozen before distillation")]
    TeacherNotFrozen(String),

    #[error("target class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("class count mismatch: model has {model}, data has {data}")]
    ClassMismatch { model: usize, data: usize },

    #[error("{0} split is empty")]
    EmptySplit(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("failed to decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("heatmap file error: {0}")]
    HeatmapFormat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's configuration rather than by
    /// something that went wrong at runtime.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. }
                | Error::UnknownModel(_)
                | Error::UnknownLayer { .. }
                | Error::ClassMismatch { .. }
        )
    }
}
