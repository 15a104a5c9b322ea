//! Small sequential CNN with hand-written backprop.
//!
//! Layout: `conv3x3 → ReLU → maxpool2` for every block except the last, which
//! is `conv3x3 → ReLU` only; then global average pooling, dropout, and a
//! linear head. With `coord_channels` every convolution also sees two fixed
//! coordinate planes (x and y in `[-1, 1]`) at its own resolution, so that a
//! GAP head can tell *where* a feature fired.
//!
//! Parameters live in one flat `Vec<f64>`: for every conv block its weights
//! `[out][in][3][3]` then its bias `[out]`, then the head weights
//! `[classes][features]` and head bias `[classes]`.

use ndarray::{Array2, Array3, ArrayView3, ArrayView4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ActivationStack, Classifier, InputShape};
use crate::error::{Error, Result};
use crate::loss::LogitBatch;

const K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub name: String,
    pub input: InputShape,
    pub conv_channels: Vec<usize>,
    pub num_classes: usize,
    pub dropout: f64,
    pub coord_channels: bool,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::config("model.conv_channels", "need at least one block with > 0 channels"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("model.num_classes", "must be >= 1"));
        }
        if self.input.is_empty() {
            return Err(Error::config("model.input", "input shape must be non-empty"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("distill.dropout", format!("{} is outside [0, 1)", self.dropout)));
        }
        let pools = self.conv_channels.len() - 1;
        let div = 1usize << pools;
        if self.input.height % div != 0 || self.input.width % div != 0 {
            return Err(Error::config(
                "model.input",
                format!("spatial size {}×{} must be divisible by {div}", self.input.height, self.input.width),
            ));
        }
        Ok(())
    }

    fn coord_planes(&self) -> usize {
        if self.coord_channels {
            2
        } else {
            0
        }
    }

    fn conv_dims(&self) -> Vec<ConvDims> {
        let mut dims = Vec::with_capacity(self.conv_channels.len());
        let (mut h, mut w) = (self.input.height, self.input.width);
        let mut cin = self.input.channels + self.coord_planes();
        let mut offset = 0;
        for &cout in &self.conv_channels {
            let weights = cout * cin * K * K;
            dims.push(ConvDims {
                cin,
                cout,
                h,
                w,
                weight_offset: offset,
                bias_offset: offset + weights,
            });
            offset += weights + cout;
            cin = cout + self.coord_planes();
            h /= 2;
            w /= 2;
        }
        dims
    }

    pub fn parameter_count(&self) -> usize {
        let convs = self.conv_dims();
        let last = convs.last().expect("validated");
        last.bias_offset + last.cout + self.num_classes * last.cout + self.num_classes
    }

    pub fn layer_names(&self) -> Vec<String> {
        (1..=self.conv_channels.len()).map(|i| format!("conv{i}")).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight_offset: usize,
    bias_offset: usize,
}

impl ConvDims {
    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Cached intermediate values of one training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    samples: Vec<SampleTape>,
}

impl ForwardTape {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Debug, Clone)]
struct SampleTape {
    /// Input of every conv block, coordinate planes last.
    conv_inputs: Vec<Vec<f64>>,
    /// Post-ReLU output of every conv block.
    conv_outputs: Vec<Vec<f64>>,
    /// For every pooled block, the flat index (into that block's output) of
    /// each pooled cell's maximum.
    pool_argmax: Vec<Vec<usize>>,
    /// Head input after dropout.
    features: Vec<f64>,
    dropout_scale: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    arch: Architecture,
    params: Vec<f64>,
    frozen: bool,
}

impl ConvNet {
    /// Fresh network: conv weights ~ U(±√(6/fan_in)), head weights
    /// ~ U(±1/√fan_in), all biases zero.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.parameter_count()];
        let convs = arch.conv_dims();
        for d in &convs {
            let bound = (6.0 / (d.cin * K * K) as f64).sqrt();
            for p in &mut params[d.weight_offset..d.bias_offset] {
                *p = rng.random_range(-bound..bound);
            }
        }
        let last = convs.last().expect("validated");
        let head = last.bias_offset + last.cout;
        let bound = 1.0 / (last.cout as f64).sqrt();
        for p in &mut params[head..head + arch.num_classes * last.cout] {
            *p = rng.random_range(-bound..bound);
        }
        Ok(Self {
            arch,
            params,
            frozen: false,
        })
    }

    pub fn from_parameters(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.parameter_count() {
            return Err(Error::shape("parameters", arch.parameter_count(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(Self {
            arch,
            params,
            frozen: false,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters for an optimizer step; refused once frozen.
    pub fn parameters_mut(&mut self) -> Result<&mut [f64]> {
        if self.frozen {
            return Err(Error::Frozen(self.arch.name.clone()));
        }
        Ok(&mut self.params)
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        let mut arch = self.arch.clone();
        arch.dropout = p;
        arch.validate()?;
        self.arch = arch;
        Ok(())
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn head_offsets(&self) -> (usize, usize, usize) {
        let last = *self.arch.conv_dims().last().expect("validated");
        let w = last.bias_offset + last.cout;
        (w, w + self.arch.num_classes * last.cout, last.cout)
    }

    fn check_input(&self, images: &ArrayView4<f64>) -> Result<()> {
        let (_, c, h, w) = images.dim();
        let expected = self.arch.input;
        if (c, h, w) != (expected.channels, expected.height, expected.width) || images.dim().0 == 0 {
            return Err(Error::shape(
                "model input",
                format!("B×{expected}"),
                format!("{}×{}×{}×{}", images.dim().0, c, h, w),
            ));
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input"));
        }
        Ok(())
    }

    /// Appends x and y coordinate planes in `[-1, 1]` when the architecture
    /// asks for them.
    fn push_coords(&self, x: &mut Vec<f64>, h: usize, w: usize) {
        if !self.arch.coord_channels {
            return;
        }
        let coord = |i: usize, n: usize| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 };
        x.reserve(2 * h * w);
        for _y in 0..h {
            for xi in 0..w {
                x.push(coord(xi, w));
            }
        }
        for y in 0..h {
            for _x in 0..w {
                x.push(coord(y, h));
            }
        }
    }

    fn forward_sample(&self, image: ArrayView3<f64>, dropout_scale: Option<Vec<f64>>, keep: bool) -> (Vec<f64>, SampleTape) {
        let convs = self.arch.conv_dims();
        let n = convs.len();
        let mut tape = SampleTape {
            conv_inputs: Vec::with_capacity(n),
            conv_outputs: Vec::with_capacity(n),
            pool_argmax: Vec::with_capacity(n.saturating_sub(1)),
            features: Vec::new(),
            dropout_scale,
        };
        let mut x: Vec<f64> = image.iter().copied().collect();
        self.push_coords(&mut x, convs[0].h, convs[0].w);
        for (i, d) in convs.iter().enumerate() {
            let mut out = conv2d(
                &x,
                d,
                &self.params[d.weight_offset..d.bias_offset],
                &self.params[d.bias_offset..d.bias_offset + d.cout],
            );
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let next = if i + 1 < n {
                let (pooled, argmax) = maxpool2(&out, d.cout, d.h, d.w);
                if keep {
                    tape.pool_argmax.push(argmax);
                }
                Some(pooled)
            } else {
                None
            };
            if keep || i + 1 == n {
                tape.conv_inputs.push(std::mem::take(&mut x));
                tape.conv_outputs.push(out);
            }
            if let Some(p) = next {
                x = p;
                self.push_coords(&mut x, convs[i + 1].h, convs[i + 1].w);
            }
        }
        let last = convs[n - 1];
        let area = last.plane() as f64;
        let mut features: Vec<f64> = tape
            .conv_outputs
            .last()
            .expect("at least one block")
            .chunks(last.plane())
            .map(|c| c.iter().sum::<f64>() / area)
            .collect();
        if let Some(scale) = &tape.dropout_scale {
            for (f, s) in features.iter_mut().zip(scale) {
                *f *= s;
            }
        }
        let (w_off, b_off, nf) = self.head_offsets();
        let logits: Vec<f64> = (0..self.arch.num_classes)
            .map(|j| {
                let row = &self.params[w_off + j * nf..w_off + (j + 1) * nf];
                self.params[b_off + j] + row.iter().zip(&features).map(|(w, f)| w * f).sum::<f64>()
            })
            .collect();
        tape.features = features;
        (logits, tape)
    }

    fn activations_sample(&self, image: ArrayView3<f64>, layer: usize) -> (Vec<f64>, Vec<f64>) {
        let (logits, tape) = self.forward_sample(image, None, true);
        (logits, tape.conv_outputs[layer].clone())
    }

    fn layer_index(&self, layer: &str) -> Result<usize> {
        self.arch
            .layer_names()
            .iter()
            .position(|l| l == layer)
            .ok_or_else(|| Error::UnknownLayer {
                model: self.arch.name.clone(),
                layer: layer.to_string(),
            })
    }

    fn logits_from_rows(&self, rows: Vec<Vec<f64>>) -> Result<LogitBatch> {
        let b = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let arr = Array2::from_shape_vec((b, self.arch.num_classes), flat).expect("row widths match");
        LogitBatch::new(arr)
    }

    /// Training-mode forward: dropout active, every intermediate kept for
    /// [`ConvNet::backward`].
    pub fn forward_train<R: Rng>(&self, images: ArrayView4<f64>, rng: &mut R) -> Result<(LogitBatch, ForwardTape)> {
        self.check_input(&images)?;
        let p = self.arch.dropout;
        let nf = *self.arch.conv_channels.last().expect("validated");
        // Masks are drawn up front and in order so the batch can be processed
        // in parallel without changing the random stream.
        let masks: Vec<Option<Vec<f64>>> = (0..images.dim().0)
            .map(|_| {
                (p > 0.0).then(|| {
                    (0..nf)
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
                        .collect()
                })
            })
            .collect();
        let results: Vec<(Vec<f64>, SampleTape)> = images
            .axis_iter(Axis(0))
            .into_par_iter()
            .zip(masks)
            .map(|(img, mask)| self.forward_sample(img, mask, true))
            .collect();
        let (rows, samples): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        Ok((self.logits_from_rows(rows)?, ForwardTape { samples }))
    }

    /// Gradient of `Σ_b Σ_j grad_logits[b, j] · logits[b, j]` with respect to
    /// every parameter, i.e. the parameter gradient of whatever loss produced
    /// `grad_logits`. Frozen networks refuse.
    pub fn backward(&self, tape: &ForwardTape, grad_logits: &Array2<f64>) -> Result<Vec<f64>> {
        if self.frozen {
            return Err(Error::Frozen(self.arch.name.clone()));
        }
        if grad_logits.dim() != (tape.samples.len(), self.arch.num_classes) {
            return Err(Error::shape(
                "backward",
                format!("({}, {})", tape.samples.len(), self.arch.num_classes),
                format!("{:?}", grad_logits.dim()),
            ));
        }
        let per_sample: Vec<Vec<f64>> = tape
            .samples
            .par_iter()
            .zip(grad_logits.axis_iter(Axis(0)).into_par_iter())
            .map(|(s, g)| self.backward_sample(s, g.as_slice().expect("standard layout row")))
            .collect();
        let mut total = vec![0.0; self.params.len()];
        for g in per_sample {
            for (t, v) in total.iter_mut().zip(g) {
                *t += v;
            }
        }
        Ok(total)
    }

    fn backward_sample(&self, s: &SampleTape, g_logits: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let convs = self.arch.conv_dims();
        let (w_off, b_off, nf) = self.head_offsets();

        let mut g_feat = vec![0.0; nf];
        for (j, &g) in g_logits.iter().enumerate() {
            grad[b_off + j] += g;
            for c in 0..nf {
                grad[w_off + j * nf + c] += g * s.features[c];
                g_feat[c] += g * self.params[w_off + j * nf + c];
            }
        }
        if let Some(scale) = &s.dropout_scale {
            for (g, sc) in g_feat.iter_mut().zip(scale) {
                *g *= sc;
            }
        }

        let last = convs[convs.len() - 1];
        let area = last.plane() as f64;
        let mut g_out: Vec<f64> = Vec::with_capacity(last.cout * last.plane());
        for &gf in &g_feat {
            g_out.extend(std::iter::repeat_n(gf / area, last.plane()));
        }

        for l in (0..convs.len()).rev() {
            let d = convs[l];
            let out = &s.conv_outputs[l];
            for (g, &o) in g_out.iter_mut().zip(out) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
            let (wslice, rest) = grad[d.weight_offset..].split_at_mut(d.bias_offset - d.weight_offset);
            let g_in = conv2d_backward(
                &s.conv_inputs[l],
                &d,
                &self.params[d.weight_offset..d.bias_offset],
                &g_out,
                wslice,
                &mut rest[..d.cout],
                l > 0,
            );
            if l > 0 {
                let prev = convs[l - 1];
                let mut g_prev = vec![0.0; prev.cout * prev.plane()];
                for (&idx, &g) in s.pool_argmax[l - 1].iter().zip(&g_in) {
                    g_prev[idx] += g;
                }
                g_out = g_prev;
            }
        }
        grad
    }
}

fn conv2d(input: &[f64], d: &ConvDims, weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let (h, w) = (d.h, d.w);
    let plane = h * w;
    let mut out = vec![0.0; d.cout * plane];
    for co in 0..d.cout {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.fill(bias[co]);
        for ci in 0..d.cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..K {
                for kx in 0..K {
                    let wv = weights[((co * d.cin + ci) * K + ky) * K + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let (y0, y1) = valid_range(h, dy);
                    let (x0, x1) = valid_range(w, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                        for (o, &v) in drow.iter_mut().zip(srow) {
                            *o += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `need_input` is set (otherwise an empty vector).
fn conv2d_backward(
    input: &[f64],
    d: &ConvDims,
    weights: &[f64],
    g_out: &[f64],
    g_weights: &mut [f64],
    g_bias: &mut [f64],
    need_input: bool,
) -> Vec<f64> {
    let (h, w) = (d.h, d.w);
    let plane = h * w;
    let mut g_in = if need_input { vec![0.0; d.cin * plane] } else { Vec::new() };
    for co in 0..d.cout {
        let go = &g_out[co * plane..(co + 1) * plane];
        g_bias[co] += go.iter().sum::<f64>();
        if go.iter().all(|&g| g == 0.0) {
            continue;
        }
        for ci in 0..d.cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..K {
                for kx in 0..K {
                    let widx = ((co * d.cin + ci) * K + ky) * K + kx;
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let (y0, y1) = valid_range(h, dy);
                    let (x0, x1) = valid_range(w, dx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &go[y * w + x0..y * w + x1];
                        let sstart = sy * w + (x0 as isize + dx) as usize;
                        let srow = &src[sstart..sstart + (x1 - x0)];
                        acc += grow.iter().zip(srow).map(|(g, v)| g * v).sum::<f64>();
                        if need_input {
                            let wv = weights[widx];
                            let dst = &mut g_in[ci * plane + sstart..ci * plane + sstart + (x1 - x0)];
                            for (o, &g) in dst.iter_mut().zip(grow) {
                                *o += wv * g;
                            }
                        }
                    }
                    g_weights[widx] += acc;
                }
            }
        }
    }
    g_in
}

/// Output positions `[lo, hi)` whose shifted source index stays in bounds.
#[inline]
fn valid_range(n: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (n as isize - shift.max(0)) as usize;
    (lo.min(n), hi.max(lo.min(n)))
}

fn maxpool2(input: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut argmax = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

impl Classifier for ConvNet {
    fn name(&self) -> &str {
        &self.arch.name
    }

    fn input_shape(&self) -> InputShape {
        self.arch.input
    }

    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn capture_layers(&self) -> Vec<String> {
        self.arch.layer_names()
    }

    fn forward(&self, images: ArrayView4<f64>) -> Result<LogitBatch> {
        self.check_input(&images)?;
        let rows: Vec<Vec<f64>> = images
            .axis_iter(Axis(0))
            .into_par_iter()
            .map(|img| self.forward_sample(img, None, false).0)
            .collect();
        self.logits_from_rows(rows)
    }

    fn forward_with_activations(
        &self,
        images: ArrayView4<f64>,
        layer: &str,
    ) -> Result<(LogitBatch, Vec<ActivationStack>)> {
        let li = self.layer_index(layer)?;
        self.check_input(&images)?;
        let d = self.arch.conv_dims()[li];
        let results: Vec<(Vec<f64>, Vec<f64>)> = images
            .axis_iter(Axis(0))
            .into_par_iter()
            .map(|img| self.activations_sample(img, li))
            .collect();
        let mut rows = Vec::with_capacity(results.len());
        let mut stacks = Vec::with_capacity(results.len());
        for (logits, act) in results {
            rows.push(logits);
            stacks.push(ActivationStack {
                layer_id: layer.to_string(),
                maps: Array3::from_shape_vec((d.cout, d.h, d.w), act).expect("conv output size"),
            });
        }
        Ok((self.logits_from_rows(rows)?, stacks))
    }
}
