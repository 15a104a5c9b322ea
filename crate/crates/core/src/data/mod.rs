//! Dataset ingestion: class-per-folder scanning with stratified splits,
//! preprocessing, batching, and a synthetic blob dataset.

mod batches;
mod manifest;
mod preprocess;
mod synthetic;

pub use batches::{Batch, Batches, LoadedSplit};
pub use manifest::{scan_folder, DatasetManifest, DatasetSplit, ManifestItem, SplitItem, SplitPolicy, SplitRole};
pub use preprocess::{preprocess, preprocess_image};
pub use synthetic::{
    generate_synthetic, load_boxes, render_sample, BoundingBox, SyntheticSpec, BOXES_FILE,
};

/// Accepted image extensions (lower case).
pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];
