//! AUC, accuracy, and F1 reporting.
//!
//! AUC and F1 are macro averages (unweighted means over classes). AUC is the
//! Mann–Whitney statistic with half credit for ties.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::LoadedSplit;
use crate::error::{Error, Result};
use crate::model::Classifier;

/// One-vs-rest AUC of `scores` against binary `labels`.
///
/// Returns `None` when the labels contain only one class, since the
/// statistic is undefined there.
pub fn auc_one_vs_rest(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        warn!("AUC undefined: labels contain a single class");
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the U statistic, kept integral so ties stay exact.
    let mut u2: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        u2 += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Some(u2 as f64 / (2 * positives * negatives) as f64)
}

/// `2PR / (P + R)`, or 0 when precision and recall are both zero or
/// undefined.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// `[true class][predicted class]` counts.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t][p] += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub split: String,
    pub averaging: String,
    pub class_names: Vec<String>,
    pub sample_count: usize,
    pub accuracy: f64,
    pub per_class_auc: Vec<Option<f64>>,
    pub macro_auc: Option<f64>,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub manifest_hash: String,
}

impl MetricReport {
    /// Builds a report from per-class scores `[N × C]` and true classes.
    pub fn from_scores(scores: &Array2<f64>, truth: &[usize], class_names: &[String]) -> Result<Self> {
        let (n, c) = scores.dim();
        if n == 0 {
            return Err(Error::EmptySplit("evaluation".into()));
        }
        if truth.len() != n {
            return Err(Error::shape("metric labels", n, truth.len()));
        }
        if c != class_names.len() {
            return Err(Error::ClassMismatch {
                model: c,
                data: class_names.len(),
            });
        }
        if let Some(&class) = truth.iter().find(|&&t| t >= c) {
            return Err(Error::ClassOutOfRange { class, num_classes: c });
        }
        let predicted: Vec<usize> = scores
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (i, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        let confusion = confusion_matrix(truth, &predicted, c);
        let correct: usize = (0..c).map(|k| confusion[k][k]).sum();

        let per_class_auc: Vec<Option<f64>> = (0..c)
            .map(|k| {
                let col: Vec<f64> = scores.column(k).to_vec();
                let labels: Vec<bool> = truth.iter().map(|&t| t == k).collect();
                auc_one_vs_rest(&col, &labels)
            })
            .collect();
        let defined: Vec<f64> = per_class_auc.iter().flatten().copied().collect();
        let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);

        let per_class_f1: Vec<f64> = (0..c)
            .map(|k| {
                let tp = confusion[k][k];
                let fp = (0..c).map(|t| confusion[t][k]).sum::<usize>() - tp;
                let fn_ = confusion[k].iter().sum::<usize>() - tp;
                f1_score(tp, fp, fn_)
            })
            .collect();
        let macro_f1 = per_class_f1.iter().sum::<f64>() / c as f64;

        Ok(Self {
            model: String::new(),
            split: String::new(),
            averaging: "macro".into(),
            class_names: class_names.to_vec(),
            sample_count: n,
            accuracy: correct as f64 / n as f64,
            per_class_auc,
            macro_auc,
            per_class_f1,
            macro_f1,
            confusion,
            config_hash: String::new(),
            checkpoint_hash: String::new(),
            manifest_hash: String::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        let mut s = String::new();
        let _ = writeln!(s, "model: {}  split: {}  n={}  (macro-averaged AUC/F1)", self.model, self.split, self.sample_count);
        let _ = writeln!(
            s,
            "AUC {}  Acc {}  F1 {}",
            self.macro_auc.map(pct).unwrap_or_else(|| "n/a".into()),
            pct(self.accuracy),
            pct(self.macro_f1)
        );
        let _ = writeln!(s, "{:<16} {:>7} {:>7} {:>8}", "class", "AUC", "F1", "support");
        for (k, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<16} {:>7} {:>7} {:>8}",
                name,
                self.per_class_auc[k].map(pct).unwrap_or_else(|| "n/a".into()),
                pct(self.per_class_f1[k]),
                self.confusion[k].iter().sum::<usize>()
            );
        }
        let _ = writeln!(s, "confusion (rows = true, cols = predicted):");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
            let _ = writeln!(s, "  {}", cells.join(""));
        }
        let _ = writeln!(s, "checkpoint {}  config {}", short(&self.checkpoint_hash), short(&self.config_hash));
        s
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

/// Renders several labelled reports as one AUC / Acc / F1 grid.
pub fn comparison_grid(rows: &[(String, MetricReport)]) -> String {
    let pct = |v: f64| format!("{:.1}", 100.0 * v);
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$} | {:>6} {:>6} {:>6} | {:>5}", "Model", "AUC", "Acc", "F1", "n");
    let _ = writeln!(s, "{}", "-".repeat(width + 31));
    for (label, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$} | {:>6} {:>6} {:>6} | {:>5}",
            label,
            r.macro_auc.map(pct).unwrap_or_else(|| "n/a".into()),
            pct(r.accuracy),
            pct(r.macro_f1),
            r.sample_count
        );
    }
    s
}

/// Sigmoid scores of `model` over every item of `split`, `[N × C]`.
pub fn predict_scores(model: &dyn Classifier, split: &LoadedSplit, batch_size: usize) -> Result<Array2<f64>> {
    if split.is_empty() {
        return Err(Error::EmptySplit(split.role().to_string()));
    }
    if model.num_classes() != split.num_classes() {
        return Err(Error::ClassMismatch {
            model: model.num_classes(),
            data: split.num_classes(),
        });
    }
    let mut out = Array2::zeros((split.len(), model.num_classes()));
    for batch in split.batches(batch_size, None, 0) {
        let batch = batch?;
        let probs = model.forward(batch.images.view())?.probabilities();
        for (row, &idx) in probs.rows().into_iter().zip(&batch.indices) {
            out.row_mut(idx).assign(&row);
        }
    }
    Ok(out)
}

/// Evaluates `model` on `split` with temperature-1 sigmoid scores.
pub fn evaluate(model: &dyn Classifier, split: &LoadedSplit, class_names: &[String], batch_size: usize) -> Result<MetricReport> {
    let scores = predict_scores(model, split, batch_size)?;
    let mut report = MetricReport::from_scores(&scores, split.labels(), class_names)?;
    report.model = model.name().to_string();
    report.split = split.role().to_string();
    Ok(report)
}
