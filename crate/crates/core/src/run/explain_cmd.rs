use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{unique_labels, RunConfig, Workspace};
use crate::error::{Error, Result};
use crate::explain::{alignment, render_panels, score_cam, AlignmentScore, HeatMap};
use crate::model::{Classifier, ConvNet};

/// Per-model heatmap statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub label: String,
    pub model: String,
    pub layer: String,
    pub checkpoint_hash: String,
    pub maps: usize,
    pub degenerate: usize,
    /// Share of maps whose argmax lies in the ground-truth box, when boxes
    /// are known.
    pub pointing_accuracy: Option<f64>,
    /// Mean heatmap entropy in nats (informational).
    pub mean_entropy: f64,
}

/// Aggregate agreement of one model's maps with the reference model's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub reference: String,
    pub model: String,
    pub pairs: usize,
    pub mean_pearson: f64,
    pub mean_iou: f64,
    pub pointing_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub index: usize,
    pub rel_path: String,
    pub class: usize,
    pub overlay: String,
    /// One entry per model, in checkpoint order.
    pub pointing: Vec<Option<bool>>,
    /// One entry per non-reference model.
    pub alignment: Vec<AlignmentScore>,
    /// Per model, in checkpoint order.
    pub entropy: Vec<f64>,
    pub degenerate: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageError {
    pub index: usize,
    pub rel_path: String,
    pub class: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub split: String,
    pub models: Vec<ModelSummary>,
    /// Absent when only one checkpoint was given.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alignment: Option<Vec<AlignmentSummary>>,
    pub images: Vec<ImageRecord>,
    pub errors: Vec<ImageError>,
}

impl ExplainReport {
    pub fn render(&self) -> String {
        let pct = |v: Option<f64>| v.map(|v| format!("{:.1}%", 100.0 * v)).unwrap_or_else(|| "n/a".into());
        let mut s = String::new();
        let _ = writeln!(s, "Score-CAM on {} images of the {} split", self.images.len(), self.split);
        for m in &self.models {
            let _ = writeln!(
                s,
                "  {:<12} layer {:<6} pointing {:>7}  entropy {:.3}  degenerate {}/{}",
                m.label,
                m.layer,
                pct(m.pointing_accuracy),
                m.mean_entropy,
                m.degenerate,
                m.maps
            );
        }
        if let Some(rows) = &self.alignment {
            let _ = writeln!(s, "Alignment with `{}`:", rows.first().map(|r| r.reference.as_str()).unwrap_or("?"));
            for a in rows {
                let _ = writeln!(
                    s,
                    "  {:<12} pearson {:.3}  IoU@0.5 {:.3}  pointing {:>7}  ({} pairs)",
                    a.model,
                    a.mean_pearson,
                    a.mean_iou,
                    pct(a.pointing_accuracy),
                    a.pairs
                );
            }
        }
        if !self.errors.is_empty() {
            let _ = writeln!(s, "{} image(s) failed:", self.errors.len());
            for e in &self.errors {
                let _ = writeln!(s, "  #{} {} class {}: {}", e.index, e.rel_path, e.class, e.message);
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct ExplainRun {
    pub dir: PathBuf,
    pub report: ExplainReport,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// `count` indices spread evenly over `0..len`.
fn spread(len: usize, count: usize) -> Vec<usize> {
    let count = count.min(len);
    (0..count).map(|i| i * len / count).collect()
}

/// Score-CAM maps for every model on sampled images of the configured
/// split, written to `<out>/explain`: `overlays/*.png` (original, then one
/// overlay per model), `heatmaps/*.heatmap` sidecars, and
/// `report.{json,txt}`. The first checkpoint is the alignment reference.
/// A failing image is recorded in the report and the batch continues.
pub fn cmd_explain(config: RunConfig, out: &Path, checkpoints: &[PathBuf]) -> Result<ExplainRun> {
    if checkpoints.is_empty() {
        return Err(Error::config("checkpoints", "need at least one checkpoint"));
    }
    let ws = Workspace::open(config, out)?;
    let ex = ws.config.explain.clone();
    let labels = unique_labels(checkpoints);
    let models: Vec<ConvNet> = checkpoints.iter().map(|p| ws.load_checkpoint(p)).collect::<Result<_>>()?;
    let layers: Vec<String> = models
        .iter()
        .map(|m| {
            let layer = match &ex.layer {
                Some(l) => l.clone(),
                None => m.default_capture_layer().ok_or_else(|| Error::UnknownLayer {
                    model: m.name().to_string(),
                    layer: "<last conv>".into(),
                })?,
            };
            if !m.capture_layers().contains(&layer) {
                return Err(Error::UnknownLayer {
                    model: m.name().to_string(),
                    layer,
                });
            }
            Ok(layer)
        })
        .collect::<Result<_>>()?;

    let split = ws.load_split(ex.split)?;
    let boxes = ws.boxes()?;
    let dir = ws.phase_dir("explain")?;
    for sub in ["overlays", "heatmaps"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let mut targets = Vec::new();
    for index in spread(split.len(), ex.samples) {
        match &ex.classes {
            Some(classes) => targets.extend(classes.iter().map(|&c| (index, c))),
            None => targets.push((index, split.labels()[index])),
        }
    }
    info!("explaining {} image/class pairs with {} model(s)", targets.len(), models.len());

    let outcomes: Vec<std::result::Result<ImageRecord, ImageError>> = targets
        .par_iter()
        .map(|&(index, class)| {
            let rel_path = split.rel_path(index).to_string();
            let fail = |e: Error| ImageError {
                index,
                rel_path: rel_path.clone(),
                class,
                message: e.to_string(),
            };
            let image = split.image(index).map_err(fail)?;
            let maps: Vec<HeatMap> = models
                .iter()
                .zip(&layers)
                .zip(&labels)
                .map(|((m, layer), label)| {
                    score_cam(m, &image, class, layer, ex.batch_size).map(|r| HeatMap {
                        source_model: label.clone(),
                        ..r.map
                    })
                })
                .collect::<Result<_>>()
                .map_err(fail)?;
            let stem = format!("{index:03}_c{class}");
            for (map, label) in maps.iter().zip(&labels) {
                map.save(&dir.join("heatmaps").join(format!("{stem}_{label}.heatmap")))
                    .map_err(fail)?;
            }
            let overlay = format!("overlays/{stem}.png");
            let refs: Vec<&HeatMap> = maps.iter().collect();
            render_panels(&image, &refs, &dir.join(&overlay)).map_err(fail)?;
            let region = boxes.as_ref().and_then(|b| b.get(&rel_path));
            let pointing = maps
                .iter()
                .map(|m| {
                    region.map(|r| {
                        let (y, x) = m.argmax();
                        !m.degenerate && r.contains(x, y)
                    })
                })
                .collect();
            let alignment = maps[1..]
                .iter()
                .map(|m| alignment(&maps[0], m, region))
                .collect::<Result<_>>()
                .map_err(fail)?;
            Ok(ImageRecord {
                index,
                rel_path: rel_path.clone(),
                class,
                overlay,
                pointing,
                alignment,
                entropy: maps.iter().map(HeatMap::entropy).collect(),
                degenerate: maps.iter().map(|m| m.degenerate).collect(),
            })
        })
        .collect();

    let mut images = Vec::new();
    let mut errors = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => images.push(r),
            Err(e) => {
                warn!("explain: image #{} ({}), class {}: {}", e.index, e.rel_path, e.class, e.message);
                errors.push(e);
            }
        }
    }

    let mut summaries = Vec::new();
    for (k, (m, label)) in models.iter().zip(&labels).enumerate() {
        summaries.push(ModelSummary {
            label: label.clone(),
            model: m.name().to_string(),
            layer: layers[k].clone(),
            checkpoint_hash: m.parameter_hash(),
            maps: images.len(),
            degenerate: images.iter().filter(|r| r.degenerate[k]).count(),
            pointing_accuracy: mean(images.iter().filter_map(|r| r.pointing[k]).map(|h| h as u8 as f64)),
            mean_entropy: mean(images.iter().map(|r| r.entropy[k])).unwrap_or(0.0),
        });
    }

    let alignment = (models.len() > 1).then(|| {
        (1..models.len())
            .map(|k| {
                let scores: Vec<&AlignmentScore> = images.iter().map(|r| &r.alignment[k - 1]).collect();
                AlignmentSummary {
                    reference: labels[0].clone(),
                    model: labels[k].clone(),
                    pairs: scores.len(),
                    mean_pearson: mean(scores.iter().map(|s| s.pearson)).unwrap_or(0.0),
                    mean_iou: mean(scores.iter().map(|s| s.iou_at_half)).unwrap_or(0.0),
                    pointing_accuracy: mean(scores.iter().filter_map(|s| s.pointing_hit).map(|h| h as u8 as f64)),
                }
            })
            .collect()
    });

    let report = ExplainReport {
        split: ex.split.to_string(),
        models: summaries,
        alignment,
        images,
        errors,
    };
    report.save(&dir.join("report.json"))?;
    fs::write(dir.join("report.txt"), report.render()).map_err(|e| Error::io(dir.join("report.txt"), e))?;
    Ok(ExplainRun { dir, report })
}
