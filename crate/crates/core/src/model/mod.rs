//! Model abstraction, the built-in toy networks, and checkpoints.

mod checkpoint;
mod convnet;
mod zoo;

use ndarray::{Array3, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::LogitBatch;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use convnet::{Architecture, ConvNet, ForwardTape};
pub use zoo::{build_model, build_toy_student, build_toy_teacher, ToyConfig, TOY_STUDENT, TOY_TEACHER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for InputShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}×{}×{}", self.channels, self.height, self.width)
    }
}

/// Post-nonlinearity feature maps of one layer for one image, `[K × H' × W']`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStack {
    pub layer_id: String,
    pub maps: Array3<f64>,
}

impl ActivationStack {
    pub fn channels(&self) -> usize {
        self.maps.dim().0
    }
}

/// Anything that maps an image batch `[B × C × H × W]` to class logits.
///
/// Implementations must be deterministic in inference mode. Adapters around
/// external pretrained networks only need to implement this trait to be
/// usable by evaluation and Score-CAM.
pub trait Classifier: Send + Sync {
    fn name(&self) -> &str;
    fn input_shape(&self) -> InputShape;
    fn num_classes(&self) -> usize;
    fn parameter_count(&self) -> usize;
    /// Layers whose activations can be captured, input side first.
    fn capture_layers(&self) -> Vec<String>;

    fn forward(&self, images: ArrayView4<f64>) -> Result<LogitBatch>;

    /// Logits plus one activation stack per image for `layer`.
    fn forward_with_activations(
        &self,
        images: ArrayView4<f64>,
        layer: &str,
    ) -> Result<(LogitBatch, Vec<ActivationStack>)>;

    /// Last capture layer; Score-CAM's default target.
    fn default_capture_layer(&self) -> Option<String> {
        self.capture_layers().pop()
    }
}
