use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::{unique_labels, RunConfig, Workspace, MANIFEST_FILE, TEACHER_CHECKPOINT};
use crate::data::{generate_synthetic, DatasetManifest, LoadedSplit, SplitPolicy, SplitRole, SyntheticSpec};
use crate::engine::{distill_student, train_student_baseline, train_teacher, TrainOutcome, TrainingTrace};
use crate::error::{Error, Result};
use crate::metrics::{comparison_grid, evaluate, MetricReport};
use crate::model::{build_model, Checkpoint, CheckpointMeta, ConvNet};

/// Files written by one training phase.
#[derive(Debug, Clone)]
pub struct PhaseRun {
    pub checkpoint: PathBuf,
    pub report_path: PathBuf,
    pub report: MetricReport,
    pub trace: TrainingTrace,
}

#[derive(Debug, Clone)]
pub struct DistillRun {
    pub dir: PathBuf,
    pub student: PhaseRun,
    pub baseline: Option<PhaseRun>,
    pub teacher_report: MetricReport,
    pub summary: DistillSummary,
    pub comparison: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub teacher_checkpoint: PathBuf,
    pub teacher_hash_before: String,
    pub teacher_hash_after: String,
    pub config_hash: String,
    pub variant: String,
}

#[derive(Debug, Clone)]
pub struct EvaluateRun {
    pub dir: PathBuf,
    pub reports: Vec<(String, MetricReport)>,
    pub grid: String,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_report(report: &MetricReport, dir: &Path, stem: &str) -> Result<PathBuf> {
    let json = dir.join(format!("{stem}.json"));
    report.save(&json)?;
    write_text(&dir.join(format!("{stem}.txt")), &report.render())?;
    Ok(json)
}

fn test_report(ws: &Workspace, model: &ConvNet, test: &LoadedSplit, config_hash: &str) -> Result<MetricReport> {
    let mut report = evaluate(model, test, &ws.manifest.class_names, ws.config.distill.batch_size)?;
    report.config_hash = config_hash.to_string();
    report.checkpoint_hash = model.parameter_hash();
    report.manifest_hash = ws.manifest.content_hash.clone();
    Ok(report)
}

/// Saves `<stem>.ckpt`, `<prefix>trace.jsonl`, and `<prefix>report.{json,txt}`.
fn finish_phase(
    ws: &Workspace,
    dir: &Path,
    stem: &str,
    prefix: &str,
    outcome: TrainOutcome,
    freeze: bool,
    test: &LoadedSplit,
) -> Result<PhaseRun> {
    let config_hash = ws.config.hash();
    let model = if freeze { outcome.model.freeze() } else { outcome.model };
    let meta = CheckpointMeta {
        epoch: outcome.best_epoch,
        seed: ws.config.distill.seed,
        config_hash: config_hash.clone(),
        val_accuracy: Some(outcome.best_val_accuracy),
        ..Default::default()
    };
    let checkpoint = dir.join(format!("{stem}.ckpt"));
    Checkpoint::from_model(&model, meta).save(&checkpoint)?;
    outcome.trace.write_jsonl(&dir.join(format!("{prefix}trace.jsonl")))?;
    let report = test_report(ws, &model, test, &config_hash)?;
    let report_path = save_report(&report, dir, &format!("{prefix}report"))?;
    info!(
        "{stem}: best epoch {} (val acc {:.3}), test acc {:.3}",
        outcome.best_epoch, outcome.best_val_accuracy, report.accuracy
    );
    Ok(PhaseRun {
        checkpoint,
        report_path,
        report,
        trace: outcome.trace,
    })
}

/// Phase 1 into `<out>/teacher`: `teacher.ckpt` (frozen), `trace.jsonl`,
/// `report.{json,txt}` on the test split.
pub fn cmd_train_teacher(config: RunConfig, out: &Path) -> Result<PhaseRun> {
    let ws = Workspace::open(config, out)?;
    let dir = ws.phase_dir("teacher")?;
    let (train, val, test) = (
        ws.load_split(SplitRole::Train)?,
        ws.load_split(SplitRole::Val)?,
        ws.load_split(SplitRole::Test)?,
    );
    let model = build_model(&ws.config.model.teacher, ws.config.model.teacher_init_seed, ws.toy_config())?;
    info!("training teacher `{}` ({} parameters)", ws.config.model.teacher, model.parameters().len());
    let outcome = train_teacher(model, &train, &val, &ws.config.distill)?;
    finish_phase(&ws, &dir, "teacher", "", outcome, true, &test)
}

/// Phase 2 into `<out>/distill`: the distilled student plus, with
/// `with_baseline`, a student trained without the teacher under the same
/// budget and a comparison grid. The teacher defaults to
/// `<out>/teacher/teacher.ckpt`.
pub fn cmd_distill(config: RunConfig, out: &Path, teacher_checkpoint: Option<&Path>, with_baseline: bool) -> Result<DistillRun> {
    let ws = Workspace::open(config, out)?;
    let teacher_path = teacher_checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("teacher").join(TEACHER_CHECKPOINT));
    let teacher = ws.load_checkpoint(&teacher_path)?.freeze();
    let dir = ws.phase_dir("distill")?;
    let (train, val, test) = (
        ws.load_split(SplitRole::Train)?,
        ws.load_split(SplitRole::Val)?,
        ws.load_split(SplitRole::Test)?,
    );
    let cfg = &ws.config.distill;
    let build_student = || build_model(&ws.config.model.student, ws.config.model.student_init_seed, ws.toy_config());

    let teacher_hash_before = teacher.parameter_hash();
    info!("distilling `{}` from {} ({:?} objective)", ws.config.model.student, teacher_path.display(), cfg.variant);
    let outcome = distill_student(build_student()?, &teacher, &train, &val, cfg)?;
    let teacher_hash_after = teacher.parameter_hash();
    let student = finish_phase(&ws, &dir, "student", "", outcome, false, &test)?;

    let baseline = if with_baseline {
        info!("training no-teacher baseline `{}`", ws.config.model.student);
        let outcome = train_student_baseline(build_student()?, &train, &val, cfg)?;
        Some(finish_phase(&ws, &dir, "baseline", "baseline_", outcome, false, &test)?)
    } else {
        None
    };

    let mut teacher_report = test_report(&ws, &teacher, &test, &ws.config.hash())?;
    teacher_report.model = "teacher".into();
    save_report(&teacher_report, &dir, "teacher_report")?;
    let mut rows = vec![
        ("teacher".to_string(), teacher_report.clone()),
        ("student (KD)".to_string(), student.report.clone()),
    ];
    if let Some(b) = &baseline {
        rows.push(("student (no KD)".to_string(), b.report.clone()));
    }
    let comparison = comparison_grid(&rows);
    write_text(&dir.join("comparison.txt"), &comparison)?;

    let summary = DistillSummary {
        teacher_checkpoint: teacher_path,
        teacher_hash_before,
        teacher_hash_after,
        config_hash: ws.config.hash(),
        variant: serde_json::to_value(cfg.variant)?.as_str().unwrap_or_default().to_string(),
    };
    write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(DistillRun {
        dir,
        student,
        baseline,
        teacher_report,
        summary,
        comparison,
    })
}

/// Evaluates each checkpoint on `split` into `<out>/evaluate`: one
/// `<label>.{json,txt}` report per checkpoint and `grid.txt`.
pub fn cmd_evaluate(config: RunConfig, out: &Path, checkpoints: &[PathBuf], split: SplitRole) -> Result<EvaluateRun> {
    if checkpoints.is_empty() {
        return Err(Error::config("checkpoints", "need at least one checkpoint"));
    }
    let ws = Workspace::open(config, out)?;
    let data = ws.load_split(split)?;
    let dir = ws.phase_dir("evaluate")?;
    let mut reports = Vec::new();
    for (label, path) in unique_labels(checkpoints).into_iter().zip(checkpoints) {
        let ckpt = Checkpoint::load(path)?;
        let config_hash = ckpt.meta.config_hash.clone();
        let model = ws.load_checkpoint(path)?;
        let mut report = evaluate(&model, &data, &ws.manifest.class_names, ws.config.distill.batch_size)?;
        report.model = label.clone();
        report.config_hash = config_hash;
        report.checkpoint_hash = model.parameter_hash();
        report.manifest_hash = ws.manifest.content_hash.clone();
        save_report(&report, &dir, &label)?;
        reports.push((label, report));
    }
    let grid = comparison_grid(&reports);
    write_text(&dir.join("grid.txt"), &grid)?;
    Ok(EvaluateRun { dir, reports, grid })
}

/// Writes a synthetic dataset to `root` plus its `manifest.json`.
pub fn cmd_gen_synthetic(spec: &SyntheticSpec, root: &Path, policy: SplitPolicy, split_seed: u64) -> Result<DatasetManifest> {
    let manifest = generate_synthetic(spec, root, policy, split_seed)?;
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}
