use std::cmp::Ordering;

use log::warn;
use ndarray::{s, Array2, Array3, Array4, ArrayView2, Axis};

use super::HeatMap;
use crate::error::{Error, Result};
use crate::loss::sigmoid;
use crate::model::Classifier;

/// A heatmap plus the softmax channel weights that produced it, in the
/// original channel order (constant channels get weight 0).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCam {
    pub map: HeatMap,
    pub weights: Vec<f64>,
}

/// Bilinear resize with half-pixel centres (`align_corners = false`),
/// sampling coordinates clamped to the source grid.
pub fn upsample_bilinear(src: ArrayView2<f64>, height: usize, width: usize) -> Array2<f64> {
    let (sh, sw) = src.dim();
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = axis(height, sh);
    let xs = axis(width, sw);
    Array2::from_shape_fn((height, width), |(y, x)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

fn min_max(a: &Array2<f64>) -> (f64, f64) {
    a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn lexicographic(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn target_probability(model: &dyn Classifier, batch: &Array4<f64>, class: usize) -> Result<Vec<f64>> {
    let logits = model.forward(batch.view())?;
    Ok(logits.values().column(class).iter().map(|&z| sigmoid(z)).collect())
}

fn check_request(model: &dyn Classifier, image: &Array3<f64>, class: usize, layer: &str) -> Result<()> {
    let shape = model.input_shape();
    if image.dim() != (shape.channels, shape.height, shape.width) {
        return Err(Error::shape("score_cam image", shape, format!("{:?}", image.dim())));
    }
    if class >= model.num_classes() {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: model.num_classes(),
        });
    }
    if !model.capture_layers().iter().any(|l| l == layer) {
        return Err(Error::UnknownLayer {
            model: model.name().to_string(),
            layer: layer.to_string(),
        });
    }
    Ok(())
}

/// Score-CAM heatmap of `image` for `class` at `layer`.
///
/// Masked inputs are scored in mini-batches of `batch_size`.
pub fn score_cam(
    model: &dyn Classifier,
    image: &Array3<f64>,
    class: usize,
    layer: &str,
    batch_size: usize,
) -> Result<ScoreCam> {
    check_request(model, image, class, layer)?;
    let input = image.clone().insert_axis(Axis(0));
    let (_, mut stacks) = model.forward_with_activations(input.view(), layer)?;
    let stack = stacks.pop().expect("one image in, one stack out");
    score_cam_from_activations(model, image, class, layer, &stack.maps, batch_size)
}

/// Score-CAM from an already captured activation stack `[K × H' × W']`.
///
/// Channels are processed in a canonical order (lexicographic on their
/// values), so any permutation of `activations` yields a bitwise identical
/// map.
pub fn score_cam_from_activations(
    model: &dyn Classifier,
    image: &Array3<f64>,
    class: usize,
    layer: &str,
    activations: &Array3<f64>,
    batch_size: usize,
) -> Result<ScoreCam> {
    check_request(model, image, class, layer)?;
    let (channels, height, width) = image.dim();
    let k = activations.dim().0;

    let upsampled: Vec<Array2<f64>> = activations
        .axis_iter(Axis(0))
        .map(|a| upsample_bilinear(a, height, width))
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| lexicographic(activations.index_axis(Axis(0), a), activations.index_axis(Axis(0), b)));

    let mut live = Vec::new();
    let mut masks = Vec::new();
    for &c in &order {
        let (lo, hi) = min_max(&upsampled[c]);
        if hi > lo {
            live.push(c);
            masks.push(upsampled[c].mapv(|v| (v - lo) / (hi - lo)));
        }
    }

    let mut weights = vec![0.0; k];
    let empty = || HeatMap {
        values: Array2::zeros((height, width)),
        target_class: class,
        source_model: model.name().to_string(),
        source_layer: layer.to_string(),
        degenerate: true,
    };
    if live.is_empty() {
        warn!("score_cam: every channel of {}/{layer} is constant; returning an all-zero map", model.name());
        return Ok(ScoreCam { map: empty(), weights });
    }

    let baseline = target_probability(model, &Array4::zeros((1, channels, height, width)), class)?[0];
    let mut scores = Vec::with_capacity(live.len());
    for chunk in masks.chunks(batch_size.max(1)) {
        let mut batch = Array4::zeros((chunk.len(), channels, height, width));
        for (mut dst, mask) in batch.axis_iter_mut(Axis(0)).zip(chunk) {
            for ch in 0..channels {
                let plane = &image.slice(s![ch, .., ..]) * mask;
                dst.slice_mut(s![ch, .., ..]).assign(&plane);
            }
        }
        scores.extend(target_probability(model, &batch, class)?);
    }

    let deltas: Vec<f64> = scores.iter().map(|s| s - baseline).collect();
    let peak = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = deltas.iter().map(|d| (d - peak).exp()).collect();
    let denom: f64 = exps.iter().sum();

    let mut acc = Array2::<f64>::zeros((height, width));
    for (&c, e) in live.iter().zip(&exps) {
        let w = e / denom;
        weights[c] = w;
        acc.scaled_add(w, &upsampled[c]);
    }
    acc.mapv_inplace(|v| v.max(0.0));
    let (lo, hi) = min_max(&acc);
    if hi <= lo {
        warn!("score_cam: weighted map for {}/{layer} is constant; returning an all-zero map", model.name());
        return Ok(ScoreCam { map: empty(), weights });
    }
    acc.mapv_inplace(|v| (v - lo) / (hi - lo));
    Ok(ScoreCam {
        map: HeatMap {
            values: acc,
            target_class: class,
            source_model: model.name().to_string(),
            source_layer: layer.to_string(),
            degenerate: false,
        },
        weights,
    })
}
