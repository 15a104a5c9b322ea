//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written from the textbook definitions, without calling
//! into the library's own helpers, so agreement is meaningful.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use xkd_core::loss::{LabelBatch, LogitBatch};

pub const EPS: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn clamp(p: f64) -> f64 {
    p.max(EPS).min(1.0 - EPS)
}

pub fn bce(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let sum: f64 = p
        .iter()
        .zip(y.iter())
        .map(|(&p, &y)| {
            let p = clamp(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    sum / p.len() as f64
}

pub fn fbce(p: &Array2<f64>, y: &Array2<f64>, gamma: f64) -> f64 {
    let sum: f64 = p
        .iter()
        .zip(y.iter())
        .map(|(&p, &y)| {
            let p = clamp(p);
            if y > 0.5 {
                -(1.0 - p).powf(gamma) * p.ln()
            } else {
                -p.powf(gamma) * (1.0 - p).ln()
            }
        })
        .sum();
    sum / p.len() as f64
}

pub fn mse(s: &Array2<f64>, t: &Array2<f64>, temp: f64) -> f64 {
    let sum: f64 = s
        .iter()
        .zip(t.iter())
        .map(|(&a, &b)| (sigmoid(a / temp) - sigmoid(b / temp)).powi(2))
        .sum();
    temp * temp * sum / s.len() as f64
}

/// Mann–Whitney AUC by counting every positive/negative pair; ties get half
/// credit. Counts stay integral (doubled) until the final division.
pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut twice: u64 = 0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                twice += 2;
            } else if p == n {
                twice += 1;
            }
        }
    }
    Some(twice as f64 / (2 * pos.len() as u64 * neg.len() as u64) as f64)
}

pub fn random_logits(rng: &mut ChaCha8Rng, b: usize, c: usize, bound: f64) -> LogitBatch {
    LogitBatch::new(Array2::from_shape_fn((b, c), |_| rng.random_range(-bound..bound))).unwrap()
}

pub fn random_multilabel(rng: &mut ChaCha8Rng, b: usize, c: usize) -> LabelBatch {
    LabelBatch::new(Array2::from_shape_fn((b, c), |_| if rng.random::<bool>() { 1.0 } else { 0.0 })).unwrap()
}

pub fn random_one_hot(rng: &mut ChaCha8Rng, b: usize, c: usize) -> LabelBatch {
    let classes: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
    LabelBatch::one_hot(&classes, c).unwrap()
}

/// Largest relative error between an analytic gradient and central
/// differences of `f`, with a floor on the denominator for near-zero
/// entries.
pub fn max_fd_rel_error(x: &Array2<f64>, analytic: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[i, j]] += h;
        let mut minus = x.clone();
        minus[[i, j]] -= h;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        let a = analytic[[i, j]];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
