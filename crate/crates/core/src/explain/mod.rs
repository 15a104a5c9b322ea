//! Score-CAM saliency, teacher/student heatmap alignment, and rendering.

mod alignment;
mod render;
mod scorecam;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use alignment::{alignment, pearson, AlignmentScore};
pub use render::{colormap, overlay, render_panels, tensor_to_rgb, OVERLAY_BLEND};
pub use scorecam::{score_cam, score_cam_from_activations, upsample_bilinear, ScoreCam};

const SIDECAR_MAGIC: &str = "xkd-heatmap 1";

/// A saliency map over the input's spatial grid, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub values: Array2<f64>,
    pub target_class: usize,
    pub source_model: String,
    pub source_layer: String,
    /// Set when every captured channel was constant and the map is all zero.
    pub degenerate: bool,
}

impl HeatMap {
    /// `(height, width)`.
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Position of the largest value, first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = ((0, 0), f64::NEG_INFINITY);
        for (pos, &v) in self.values.indexed_iter() {
            if v > best.1 {
                best = (pos, v);
            }
        }
        best.0
    }

    /// Shannon entropy (nats) of the map read as a spatial distribution.
    /// Zero for an all-zero map.
    pub fn entropy(&self) -> f64 {
        let total: f64 = self.values.sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.values
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| {
                let p = v / total;
                -p * p.ln()
            })
            .sum()
    }

    /// Text sidecar: a header of `key value` lines, then one line of
    /// space-separated values per row. Values use the shortest decimal that
    /// parses back to the same `f64`.
    pub fn to_sidecar(&self) -> String {
        let (h, w) = self.shape();
        let mut out = String::new();
        let _ = writeln!(out, "{SIDECAR_MAGIC}");
        let _ = writeln!(out, "shape {h} {w}");
        let _ = writeln!(out, "class {}", self.target_class);
        let _ = writeln!(out, "model {}", self.source_model);
        let _ = writeln!(out, "layer {}", self.source_layer);
        let _ = writeln!(out, "degenerate {}", self.degenerate);
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::HeatmapFormat(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(SIDECAR_MAGIC) {
            return Err(bad("missing header line"));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing `{key}` line")))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key}`, found `{line}`")))
        };
        let shape = field("shape")?;
        let dims: Vec<usize> = shape
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad("shape is not two integers")))
            .collect::<Result<_>>()?;
        let [h, w] = dims[..] else {
            return Err(bad("shape is not two integers"));
        };
        let target_class = field("class")?.parse().map_err(|_| bad("class is not an integer"))?;
        let source_model = field("model")?;
        let source_layer = field("layer")?;
        let degenerate = field("degenerate")?.parse().map_err(|_| bad("degenerate is not a bool"))?;
        let mut values = Vec::with_capacity(h * w);
        for r in 0..h {
            let line = lines.next().ok_or_else(|| bad(&format!("missing row {r}")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| bad(&format!("bad value `{s}` in row {r}"))))
                .collect::<Result<_>>()?;
            if row.len() != w {
                return Err(bad(&format!("row {r} has {} values, expected {w}", row.len())));
            }
            values.extend(row);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing data after last row"));
        }
        Ok(Self {
            values: Array2::from_shape_vec((h, w), values).expect("row lengths checked"),
            target_class,
            source_model,
            source_layer,
            degenerate,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_sidecar()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_sidecar(&text)
    }
}
