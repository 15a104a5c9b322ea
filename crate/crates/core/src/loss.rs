//! Distillation objectives and their closed-form gradients.
//!
//! Every loss reduces by the mean. The element-wise losses (BCE, focal BCE,
//! tempered MSE) average over all `B·C` label slots; the softmax objective
//! (CE + KL) averages over the `B` rows. Gradients are always with respect
//! to the student logits. Teacher logits are constants.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

/// Raw class scores, `[batch × classes]`, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch(Array2<f64>);

impl LogitBatch {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::shape("logit batch", "at least 1×1", format!("{:?}", values.dim())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logit batch"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn batch_size(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }

    /// Sigmoid of every logit.
    pub fn probabilities(&self) -> Array2<f64> {
        self.0.mapv(sigmoid)
    }

    /// Index of the highest score in each row (first index wins ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Binary targets, `[batch × classes]`, entries in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBatch(Array2<f64>);

impl LabelBatch {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::config("labels", "entries must be 0 or 1"));
        }
        Ok(Self(values))
    }

    /// One-hot rows from class indices.
    pub fn one_hot(classes: &[usize], num_classes: usize) -> Result<Self> {
        let mut values = Array2::zeros((classes.len(), num_classes));
        for (row, &c) in classes.iter().enumerate() {
            if c >= num_classes {
                return Err(Error::ClassOutOfRange { class: c, num_classes });
            }
            values[[row, c]] = 1.0;
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn check_one_hot(&self) -> Result<()> {
        for (row, r) in self.0.rows().into_iter().enumerate() {
            if r.sum() != 1.0 {
                return Err(Error::NotOneHot { row });
            }
        }
        Ok(())
    }

    /// Class index of each one-hot row.
    pub fn class_indices(&self) -> Result<Vec<usize>> {
        self.check_one_hot()?;
        Ok(self
            .0
            .rows()
            .into_iter()
            .map(|r| r.iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Focal BCE on hard labels plus tempered sigmoid MSE against the teacher.
    #[default]
    FbceMse,
    /// Softmax cross-entropy plus temperature-scaled KL divergence.
    CeKl,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fbce_mse" => Ok(LossVariant::FbceMse),
            "ce_kl" => Ok(LossVariant::CeKl),
            other => Err(Error::config("variant", format!("unknown objective `{other}` (expected fbce_mse or ce_kl)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub temperature: f64,
    #[serde(default)]
    pub variant: LossVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 2.0,
            temperature: 2.0,
            variant: LossVariant::FbceMse,
        }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, gamma: f64, temperature: f64, variant: LossVariant) -> Result<Self> {
        let cfg = Self {
            alpha,
            gamma,
            temperature,
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("{} is outside [0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma", format!("{} must be finite and >= 0", self.gamma)));
        }
        check_temperature(self.temperature)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::config("temperature", format!("{t} must be finite and > 0")));
    }
    Ok(())
}

/// Result of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub supervised_term: f64,
    pub distill_term: f64,
    /// d total / d student logits.
    pub gradient: Array2<f64>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(context: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(context, format!("{a:?}"), format!("{b:?}")));
    }
    Ok(())
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[inline]
fn bce_term(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[inline]
fn fbce_term(p: f64, y: f64, gamma: f64) -> f64 {
    let p = clamp_prob(p);
    if y == 1.0 {
        -(1.0 - p).powf(gamma) * p.ln()
    } else {
        -p.powf(gamma) * (1.0 - p).ln()
    }
}

/// d fbce_term(sigmoid(z), y) / dz, written in terms of p = sigmoid(z).
/// Zero where the clamp is active.
#[inline]
fn fbce_logit_grad(p: f64, y: f64, gamma: f64) -> f64 {
    if p < PROB_EPS || p > 1.0 - PROB_EPS {
        return 0.0;
    }
    let q = 1.0 - p;
    if y == 1.0 {
        gamma * q.powf(gamma) * p * p.ln() - q.powf(gamma + 1.0)
    } else {
        p.powf(gamma + 1.0) - gamma * p.powf(gamma) * q * q.ln()
    }
}

/// Mean binary cross-entropy over every element.
pub fn bce_loss(p: ArrayView2<f64>, y: &LabelBatch) -> Result<f64> {
    same_shape("bce_loss", p.dim(), y.0.dim())?;
    let n = p.len() as f64;
    let sum: f64 = p.iter().zip(y.0.iter()).map(|(&p, &y)| bce_term(p, y)).sum();
    Ok(sum / n)
}

/// Mean focal binary cross-entropy over every element.
pub fn fbce_loss(p: ArrayView2<f64>, y: &LabelBatch, gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::config("gamma", format!("{gamma} must be finite and >= 0")));
    }
    same_shape("fbce_loss", p.dim(), y.0.dim())?;
    let n = p.len() as f64;
    let sum: f64 = p
        .iter()
        .zip(y.0.iter())
        .map(|(&p, &y)| fbce_term(p, y, gamma))
        .sum();
    Ok(sum / n)
}

/// Per-element focal terms (no reduction), useful for inspecting the
/// modulating factor.
pub fn fbce_elementwise(p: ArrayView2<f64>, y: &LabelBatch, gamma: f64) -> Result<Array2<f64>> {
    same_shape("fbce_elementwise", p.dim(), y.0.dim())?;
    let mut out = Array2::zeros(p.dim());
    Zip::from(&mut out)
        .and(&p)
        .and(&y.0)
        .for_each(|o, &p, &y| *o = fbce_term(p, y, gamma));
    Ok(out)
}

/// `(T²/n) Σ (σ(s/T) − σ(t/T))²` with `n = B·C`.
pub fn mse_distill_loss(student: &LogitBatch, teacher: &LogitBatch, temperature: f64) -> Result<f64> {
    Ok(mse_distill_with_grad(student, teacher, temperature)?.0)
}

fn mse_distill_with_grad(student: &LogitBatch, teacher: &LogitBatch, t: f64) -> Result<(f64, Array2<f64>)> {
    check_temperature(t)?;
    same_shape("mse_distill_loss", student.0.dim(), teacher.0.dim())?;
    let n = student.0.len() as f64;
    let mut grad = Array2::zeros(student.0.dim());
    let mut sum = 0.0;
    Zip::from(&mut grad)
        .and(&student.0)
        .and(&teacher.0)
        .for_each(|g, &s, &tch| {
            let qs = sigmoid(s / t);
            let d = qs - sigmoid(tch / t);
            sum += d * d;
            *g = 2.0 * t / n * d * qs * (1.0 - qs);
        });
    Ok((t * t / n * sum, grad))
}

fn fbce_with_grad(student: &LogitBatch, y: &LabelBatch, gamma: f64) -> Result<(f64, Array2<f64>)> {
    same_shape("fbce", student.0.dim(), y.0.dim())?;
    let n = student.0.len() as f64;
    let p = student.probabilities();
    let value = fbce_loss(p.view(), y, gamma)?;
    let mut grad = Array2::zeros(p.dim());
    Zip::from(&mut grad)
        .and(&p)
        .and(&y.0)
        .for_each(|g, &p, &y| *g = fbce_logit_grad(p, y, gamma) / n);
    Ok((value, grad))
}

fn combine(alpha: f64, sup: (f64, Array2<f64>), dist: (f64, Array2<f64>)) -> LossValue {
    let (supervised_term, mut gradient) = sup;
    let (distill_term, dist_grad) = dist;
    Zip::from(&mut gradient)
        .and(&dist_grad)
        .for_each(|g, &d| *g = alpha * *g + (1.0 - alpha) * d);
    LossValue {
        total: alpha * supervised_term + (1.0 - alpha) * distill_term,
        supervised_term,
        distill_term,
        gradient,
    }
}

/// Focal BCE against labels mixed with tempered MSE against the teacher.
pub fn kd_loss(student: &LogitBatch, teacher: &LogitBatch, y: &LabelBatch, cfg: &LossConfig) -> Result<LossValue> {
    cfg.validate()?;
    same_shape("kd_loss", student.0.dim(), teacher.0.dim())?;
    let sup = fbce_with_grad(student, y, cfg.gamma)?;
    let dist = mse_distill_with_grad(student, teacher, cfg.temperature)?;
    Ok(combine(cfg.alpha, sup, dist))
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>, scale: f64) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / scale));
    let lse = row.iter().map(|&v| (v / scale - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&v| v / scale - lse).collect()
}

fn ce_with_grad(student: &LogitBatch, y: &LabelBatch) -> Result<(f64, Array2<f64>)> {
    let classes = y.class_indices()?;
    let b = student.batch_size() as f64;
    let mut grad = Array2::zeros(student.0.dim());
    let mut sum = 0.0;
    for (i, (row, &c)) in student.0.rows().into_iter().zip(&classes).enumerate() {
        let logq = log_softmax_row(row, 1.0);
        sum -= logq[c];
        for (j, lq) in logq.iter().enumerate() {
            let target = if j == c { 1.0 } else { 0.0 };
            grad[[i, j]] = (lq.exp() - target) / b;
        }
    }
    Ok((sum / b, grad))
}

fn kl_with_grad(student: &LogitBatch, teacher: &LogitBatch, t: f64) -> Result<(f64, Array2<f64>)> {
    check_temperature(t)?;
    let b = student.batch_size() as f64;
    let mut grad = Array2::zeros(student.0.dim());
    let mut sum = 0.0;
    for (i, (srow, trow)) in student.0.rows().into_iter().zip(teacher.0.rows()).enumerate() {
        let logq = log_softmax_row(srow, t);
        let logp = log_softmax_row(trow, t);
        let mut kl = 0.0;
        for j in 0..logq.len() {
            let p = logp[j].exp();
            if p > 0.0 {
                kl += p * (logp[j] - logq[j]);
            }
            grad[[i, j]] = t * (logq[j].exp() - p) / b;
        }
        sum += kl.max(0.0);
    }
    Ok((t * t * sum / b, grad))
}

/// Softmax cross-entropy mixed with `T²·KL(softmax(t/T) ‖ softmax(s/T))`.
/// Labels must be one-hot.
pub fn ce_kl_loss(student: &LogitBatch, teacher: &LogitBatch, y: &LabelBatch, cfg: &LossConfig) -> Result<LossValue> {
    cfg.validate()?;
    same_shape("ce_kl_loss", student.0.dim(), teacher.0.dim())?;
    same_shape("ce_kl_loss", student.0.dim(), y.0.dim())?;
    let sup = ce_with_grad(student, y)?;
    let dist = kl_with_grad(student, teacher, cfg.temperature)?;
    Ok(combine(cfg.alpha, sup, dist))
}

/// Evaluates whichever objective `cfg.variant` selects.
pub fn objective(student: &LogitBatch, teacher: &LogitBatch, y: &LabelBatch, cfg: &LossConfig) -> Result<LossValue> {
    match cfg.variant {
        LossVariant::FbceMse => kd_loss(student, teacher, y, cfg),
        LossVariant::CeKl => ce_kl_loss(student, teacher, y, cfg),
    }
}

/// The hard-label half of the selected objective on its own: focal BCE for
/// `FbceMse`, cross-entropy for `CeKl`. The distill term is reported as zero.
pub fn supervised_loss(student: &LogitBatch, y: &LabelBatch, cfg: &LossConfig) -> Result<LossValue> {
    cfg.validate()?;
    let (supervised_term, gradient) = match cfg.variant {
        LossVariant::FbceMse => fbce_with_grad(student, y, cfg.gamma)?,
        LossVariant::CeKl => {
            same_shape("ce", student.0.dim(), y.0.dim())?;
            ce_with_grad(student, y)?
        }
    };
    Ok(LossValue {
        total: supervised_term,
        supervised_term,
        distill_term: 0.0,
        gradient,
    })
}

/// Mean BCE on sigmoid outputs with its logit gradient; the teacher's
/// training objective.
pub fn bce_with_grad(student: &LogitBatch, y: &LabelBatch) -> Result<LossValue> {
    let (supervised_term, gradient) = fbce_with_grad(student, y, 0.0)?;
    Ok(LossValue {
        total: supervised_term,
        supervised_term,
        distill_term: 0.0,
        gradient,
    })
}
