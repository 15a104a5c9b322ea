//! Named built-in networks.

use super::convnet::{Architecture, ConvNet};
use super::InputShape;
use crate::error::{Error, Result};

pub const TOY_TEACHER: &str = "toy-teacher";
pub const TOY_STUDENT: &str = "toy-student";

/// Shape parameters shared by the toy networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub input: InputShape,
    pub num_classes: usize,
    pub dropout: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            input: InputShape::new(3, 32, 32),
            num_classes: 3,
            dropout: 0.2,
        }
    }
}

fn toy(name: &str, channels: Vec<usize>, cfg: ToyConfig, seed: u64) -> Result<ConvNet> {
    ConvNet::new(
        Architecture {
            name: name.to_string(),
            input: cfg.input,
            conv_channels: channels,
            num_classes: cfg.num_classes,
            dropout: cfg.dropout,
            coord_channels: true,
        },
        seed,
    )
}

/// Three conv blocks (8, 16, 32 channels).
pub fn build_toy_teacher(seed: u64, cfg: ToyConfig) -> Result<ConvNet> {
    toy(TOY_TEACHER, vec![8, 16, 32], cfg, seed)
}

/// Two conv blocks (6, 12 channels).
pub fn build_toy_student(seed: u64, cfg: ToyConfig) -> Result<ConvNet> {
    toy(TOY_STUDENT, vec![6, 12], cfg, seed)
}

/// Looks a model up by registry name.
pub fn build_model(name: &str, seed: u64, cfg: ToyConfig) -> Result<ConvNet> {
    match name {
        TOY_TEACHER => build_toy_teacher(seed, cfg),
        TOY_STUDENT => build_toy_student(seed, cfg),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}
