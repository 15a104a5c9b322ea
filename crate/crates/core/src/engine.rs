//! Two-phase training: hard-label teacher pretraining, then distillation of a
//! student against the frozen teacher's logits.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::info;
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::LoadedSplit;
use crate::error::{Error, Result};
use crate::loss::{self, LossConfig, LossValue, LossVariant};
use crate::metrics::predict_scores;
use crate::model::{Classifier, ConvNet};
use crate::optim::{Optimizer, OptimizerKind};

const TEACHER_STREAM: u64 = 0x7ea0;
const STUDENT_STREAM: u64 = 0x57d0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub variant: LossVariant,
    pub epochs_teacher: usize,
    pub epochs_student: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Dropout before the classifier head of the toy models.
    pub dropout: f64,
    pub weight_decay: f64,
    /// Max relative brightness change applied to training images; 0 disables.
    pub brightness_jitter: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        Self {
            alpha: loss.alpha,
            gamma: loss.gamma,
            temperature: loss.temperature,
            variant: loss.variant,
            epochs_teacher: 10,
            epochs_student: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            dropout: 0.2,
            weight_decay: 0.0,
            brightness_jitter: 0.0,
        }
    }
}

impl DistillConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            temperature: self.temperature,
            variant: self.variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss().validate().map_err(|e| match e {
            Error::InvalidConfig { field, reason } => Error::InvalidConfig {
                field: format!("distill.{field}"),
                reason,
            },
            other => other,
        })?;
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("distill.{field}"), "must be >= 1"))
            } else {
                Ok(())
            }
        };
        positive("epochs_teacher", self.epochs_teacher)?;
        positive("epochs_student", self.epochs_student)?;
        positive("batch_size", self.batch_size)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("distill.learning_rate", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("distill.dropout", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("distill.weight_decay", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.brightness_jitter) {
            return Err(Error::config("distill.brightness_jitter", "must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_supervised: f64,
    pub mean_distill: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainingTrace {
    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_accuracy).reduce(f64::max)
    }

    /// Equal up to wall-clock timings.
    pub fn same_run(&self, other: &TrainingTrace) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                EpochRecord { seconds: 0.0, ..a.clone() } == EpochRecord { seconds: 0.0, ..b.clone() }
            })
    }

    /// One JSON object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            let line = serde_json::to_string(r)?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy (latest
    /// epoch on ties).
    pub model: ConvNet,
    pub trace: TrainingTrace,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Fraction of `split` whose argmax prediction matches the label.
pub fn accuracy(model: &dyn Classifier, split: &LoadedSplit, batch_size: usize) -> Result<f64> {
    let scores = predict_scores(model, split, batch_size)?;
    let correct = scores
        .rows()
        .into_iter()
        .zip(split.labels())
        .filter(|(row, &label)| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best == label
        })
        .count();
    Ok(correct as f64 / split.len() as f64)
}

fn check_data(model: &ConvNet, train: &LoadedSplit, val: &LoadedSplit) -> Result<()> {
    for split in [train, val] {
        if split.is_empty() {
            return Err(Error::EmptySplit(split.role().to_string()));
        }
        if split.num_classes() != model.num_classes() {
            return Err(Error::ClassMismatch {
                model: model.num_classes(),
                data: split.num_classes(),
            });
        }
        if split.shape() != model.input_shape() {
            return Err(Error::shape("dataset images", model.input_shape(), split.shape()));
        }
    }
    Ok(())
}

fn jitter(images: &mut Array4<f64>, amount: f64, rng: &mut ChaCha8Rng) {
    for mut img in images.outer_iter_mut() {
        let factor = 1.0 + rng.random_range(-amount..=amount);
        img.mapv_inplace(|v| (v * factor).clamp(0.0, 1.0));
    }
}

enum Objective<'a> {
    /// Mean BCE on hard labels.
    Bce,
    /// Supervised half of the configured objective only.
    Supervised(LossConfig),
    /// Full objective against a frozen teacher.
    Distill(LossConfig, &'a ConvNet),
}

fn run_phase(mut model: ConvNet, objective: Objective<'_>, train: &LoadedSplit, val: &LoadedSplit, cfg: &DistillConfig, phase: &str, epochs: usize, stream: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(&model, train, val)?;
    model.set_dropout(cfg.dropout)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay, model.parameters().len());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stream);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stream);
    augment_rng.set_stream(1);
    let shuffle_seed = cfg.seed.wrapping_add(stream);

    let mut trace = TrainingTrace::default();
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for epoch in 1..=epochs {
        let started = Instant::now();
        let (mut total, mut sup, mut dist) = (0.0, 0.0, 0.0);
        for batch in train.batches(cfg.batch_size, Some(shuffle_seed), epoch) {
            let mut batch = batch?;
            if cfg.brightness_jitter > 0.0 {
                jitter(&mut batch.images, cfg.brightness_jitter, &mut augment_rng);
            }
            let teacher_logits = match &objective {
                Objective::Distill(_, teacher) => Some(teacher.forward(batch.images.view())?),
                _ => None,
            };
            let (logits, tape) = model.forward_train(batch.images.view(), &mut dropout_rng)?;
            let value: LossValue = match (&objective, &teacher_logits) {
                (Objective::Bce, _) => loss::bce_with_grad(&logits, &batch.labels)?,
                (Objective::Supervised(lc), _) => loss::supervised_loss(&logits, &batch.labels, lc)?,
                (Objective::Distill(lc, _), Some(t)) => loss::objective(&logits, t, &batch.labels, lc)?,
                (Objective::Distill(..), None) => unreachable!("teacher logits computed above"),
            };
            if !value.total.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            let grads = model.backward(&tape, &value.gradient)?;
            optimizer.step(model.parameters_mut()?, &grads);
            let b = batch.indices.len() as f64;
            total += value.total * b;
            sup += value.supervised_term * b;
            dist += value.distill_term * b;
        }
        let n = train.len() as f64;
        let val_accuracy = accuracy(&model, val, cfg.batch_size)?;
        let record = EpochRecord {
            phase: phase.to_string(),
            epoch,
            mean_total: total / n,
            mean_supervised: sup / n,
            mean_distill: dist / n,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "[{phase}] epoch {epoch}/{epochs} loss {:.5} (sup {:.5}, distill {:.5}) val acc {:.4}",
            record.mean_total, record.mean_supervised, record.mean_distill, val_accuracy
        );
        trace.records.push(record);
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy >= *acc) {
            best = Some((epoch, val_accuracy, model.parameters().to_vec()));
        }
    }
    let (best_epoch, best_val_accuracy, params) = best.expect("epochs >= 1");
    model.parameters_mut()?.copy_from_slice(&params);
    Ok(TrainOutcome {
        model,
        trace,
        best_epoch,
        best_val_accuracy,
    })
}

/// Phase 1: trains `model` on hard labels with mean BCE.
pub fn train_teacher(model: ConvNet, train: &LoadedSplit, val: &LoadedSplit, cfg: &DistillConfig) -> Result<TrainOutcome> {
    run_phase(model, Objective::Bce, train, val, cfg, "teacher", cfg.epochs_teacher, TEACHER_STREAM)
}

/// Phase 2: per mini-batch, teacher logits (inference mode, no gradient),
/// student logits, the configured objective, then one student update.
pub fn distill_student(student: ConvNet, teacher: &ConvNet, train: &LoadedSplit, val: &LoadedSplit, cfg: &DistillConfig) -> Result<TrainOutcome> {
    if !teacher.is_frozen() {
        return Err(Error::TeacherNotFrozen(teacher.name().to_string()));
    }
    if teacher.num_classes() != student.num_classes() {
        return Err(Error::ClassMismatch {
            model: student.num_classes(),
            data: teacher.num_classes(),
        });
    }
    if teacher.input_shape() != student.input_shape() {
        return Err(Error::shape("teacher input", student.input_shape(), teacher.input_shape()));
    }
    let before = teacher.parameter_hash();
    let out = run_phase(student, Objective::Distill(cfg.loss(), teacher), train, val, cfg, "distill", cfg.epochs_student, STUDENT_STREAM)?;
    if teacher.parameter_hash() != before {
        return Err(Error::Checkpoint("teacher parameters changed during distillation".into()));
    }
    Ok(out)
}

/// The no-teacher control: the student trained on the supervised half of the
/// configured objective with the same budget and random streams as
/// [`distill_student`].
pub fn train_student_baseline(student: ConvNet, train: &LoadedSplit, val: &LoadedSplit, cfg: &DistillConfig) -> Result<TrainOutcome> {
    run_phase(student, Objective::Supervised(cfg.loss()), train, val, cfg, "baseline", cfg.epochs_student, STUDENT_STREAM)
}
