//! Acceptance criteria 1–8. Each test prints one `PASS`/`FAIL` line before
//! asserting. Run with
//! `cargo test -p xkd-core --test acceptance -- --nocapture --test-threads 1`
//! to see the lines in order.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use xkd_core::data::SplitRole;
use xkd_core::explain::{score_cam_from_activations, HeatMap};
use xkd_core::loss::{bce_loss, fbce_loss, kd_loss, mse_distill_loss, objective, LogitBatch, LossConfig, LossVariant};
use xkd_core::metrics::auc_one_vs_rest;
use xkd_core::model::Classifier;
use xkd_core::run::{
    cmd_distill, cmd_explain, cmd_train_teacher, DistillRun, ExplainRun, PhaseRun, RunConfig, Workspace, RESOLVED_CONFIG,
};

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------- 1–4

#[test]
fn criterion_1_loss_identities() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_gamma, mut worst_mix) = (0.0f64, 0.0f64);
    let mut boundaries = true;
    for _ in 0..1000 {
        let (b, c) = (rng.random_range(1..=16), rng.random_range(1..=10));
        let s = common::random_logits(&mut rng, b, c, 8.0);
        let t = common::random_logits(&mut rng, b, c, 8.0);
        let y = common::random_multilabel(&mut rng, b, c);
        let p = s.values().mapv(common::sigmoid);
        let plain = bce_loss(p.view(), &y).unwrap();
        let focal = fbce_loss(p.view(), &y, 0.0).unwrap();
        worst_gamma = worst_gamma.max((focal - plain).abs() / plain);

        let alpha = rng.random_range(0.0..=1.0);
        let cfg = LossConfig::new(alpha, rng.random_range(0.0..4.0), rng.random_range(0.5..8.0), LossVariant::FbceMse).unwrap();
        let v = kd_loss(&s, &t, &y, &cfg).unwrap();
        let mix = alpha * v.supervised_term + (1.0 - alpha) * v.distill_term;
        worst_mix = worst_mix.max((v.total - mix).abs() / mix.max(f64::MIN_POSITIVE));

        let one = kd_loss(&s, &t, &y, &LossConfig { alpha: 1.0, ..cfg }).unwrap();
        let zero = kd_loss(&s, &t, &y, &LossConfig { alpha: 0.0, ..cfg }).unwrap();
        boundaries &= one.total == one.supervised_term && zero.total == zero.distill_term;
    }
    let elapsed = start.elapsed();
    let pass = worst_gamma <= 1e-12 && worst_mix <= 1e-12 && boundaries && elapsed < Duration::from_secs(10);
    report(
        1,
        pass,
        format!("max rel |FBCE(0)-BCE| {worst_gamma:.1e}, max rel mix error {worst_mix:.1e}, boundaries exact {boundaries}, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_gradient_checks() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (b, c) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let s = common::random_logits(&mut rng, b, c, 8.0);
        let t = common::random_logits(&mut rng, b, c, 8.0);
        for variant in [LossVariant::FbceMse, LossVariant::CeKl] {
            let y = match variant {
                LossVariant::FbceMse => common::random_multilabel(&mut rng, b, c),
                LossVariant::CeKl => common::random_one_hot(&mut rng, b, c),
            };
            let cfg = LossConfig::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..4.0), rng.random_range(0.5..8.0), variant)
                .unwrap();
            let analytic = objective(&s, &t, &y, &cfg).unwrap().gradient;
            let err = common::max_fd_rel_error(s.values(), &analytic, 1e-5, |x| {
                objective(&LogitBatch::new(x.clone()).unwrap(), &t, &y, &cfg).unwrap().total
            });
            worst = worst.max(err);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && elapsed < Duration::from_secs(30);
    report(2, pass, format!("max relative error {worst:.2e} over 100 configurations x 2 variants, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_3_temperature_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (b, c) = (rng.random_range(1..=16), rng.random_range(1..=10));
        let s = common::random_logits(&mut rng, b, c, 8.0);
        let t = common::random_logits(&mut rng, b, c, 8.0);
        let n = (b * c) as f64;
        let limit: f64 = s.values().iter().zip(t.values().iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (16.0 * n);
        worst = worst.max((mse_distill_loss(&s, &t, 1e4).unwrap() - limit).abs());
    }
    let pass = worst < 1e-4;
    report(3, pass, format!("max |L_MSE(T=1e4) - limit| {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_4_auc_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=25);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        if auc_one_vs_rest(&scores, &labels) != common::brute_force_auc(&scores, &labels) {
            mismatches += 1;
        }
    }
    let anchor = auc_one_vs_rest(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]);
    let pass = mismatches == 0 && anchor == Some(0.75);
    report(4, pass, format!("{mismatches} mismatches in 200 tied instances, anchor case {anchor:?}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 5–8

struct Run {
    out: PathBuf,
    teacher: PhaseRun,
    distill: DistillRun,
    explain: ExplainRun,
    train_time: Duration,
}

struct Pipeline {
    first: Run,
    second: Run,
}

fn quickstart() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quickstart.toml")
}

/// Teacher, distillation with baseline, and explain on
/// `[teacher, student, baseline]`, each from its own config.
fn run_all(teacher_cfg: RunConfig, distill_cfg: RunConfig, explain_cfg: RunConfig, out: &Path) -> Run {
    if out.exists() {
        fs::remove_dir_all(out).unwrap();
    }
    let start = Instant::now();
    let teacher = cmd_train_teacher(teacher_cfg, out).unwrap();
    let distill = cmd_distill(distill_cfg, out, None, true).unwrap();
    let train_time = start.elapsed();
    let checkpoints = vec![
        teacher.checkpoint.clone(),
        distill.student.checkpoint.clone(),
        distill.baseline.as_ref().unwrap().checkpoint.clone(),
    ];
    let explain = cmd_explain(explain_cfg, out, &checkpoints).unwrap();
    Run {
        out: out.to_path_buf(),
        teacher,
        distill,
        explain,
        train_time,
    }
}

fn pipeline() -> &'static Pipeline {
    static PIPELINE: OnceLock<Pipeline> = OnceLock::new();
    PIPELINE.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        let cfg = RunConfig::load(&quickstart()).unwrap();
        let first = run_all(cfg.clone(), cfg.clone(), cfg, &root.join("first"));
        // The second run reads only what the first persisted.
        let resolved = |phase: &str| RunConfig::load(&first.out.join(phase).join(RESOLVED_CONFIG)).unwrap();
        let second = run_all(resolved("teacher"), resolved("distill"), resolved("explain"), &root.join("second"));
        Pipeline { first, second }
    })
}

fn sha256(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

const REPORTS: [&str; 5] = [
    "teacher/report.json",
    "distill/report.json",
    "distill/baseline_report.json",
    "distill/teacher_report.json",
    "explain/report.json",
];

#[test]
fn criterion_5_scaled_distillation() {
    let p = pipeline();
    let r = &p.first;
    let ws = Workspace::open(RunConfig::load(&r.out.join("teacher").join(RESOLVED_CONFIG)).unwrap(), &r.out).unwrap();
    let sizes = [SplitRole::Train, SplitRole::Val, SplitRole::Test].map(|role| ws.manifest.split(role).len());
    let d = &ws.config.distill;
    let setup = ws.manifest.num_classes() == 3
        && sizes == [300, 60, 90]
        && d.epochs_teacher == 10
        && d.epochs_student == 10
        && d.alpha == 0.5;

    let teacher = r.teacher.report.accuracy;
    let student = r.distill.student.report.accuracy;
    let baseline = r.distill.baseline.as_ref().unwrap().report.accuracy;
    let same = REPORTS[..4].iter().all(|f| sha256(&r.out.join(f)) == sha256(&p.second.out.join(f)));
    let pass = setup
        && teacher >= 0.95
        && student >= 0.90
        && student >= baseline - 0.02
        && r.train_time < Duration::from_secs(600)
        && same;
    report(
        5,
        pass,
        format!(
            "splits {sizes:?}, teacher acc {teacher:.4}, KD student {student:.4}, baseline {baseline:.4}, training {:.1?}, identical reports on rerun {same}",
            r.train_time
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_score_cam_localization() {
    let p = pipeline();
    let r = &p.first;
    let teacher = &r.explain.report.models[0];
    let pointing = teacher.pointing_accuracy.unwrap_or(0.0);
    let images = r.explain.report.images.len();

    let mut bad_range = 0;
    let mut maps = 0;
    for entry in fs::read_dir(r.explain.dir.join("heatmaps")).unwrap() {
        let m = HeatMap::load(&entry.unwrap().path()).unwrap();
        maps += 1;
        let lo = m.values.iter().copied().fold(f64::MAX, f64::min);
        let hi = m.values.iter().copied().fold(f64::MIN, f64::max);
        if !m.degenerate && (lo, hi) != (0.0, 1.0) {
            bad_range += 1;
        }
    }

    let ws = Workspace::open(RunConfig::load(&r.out.join("explain").join(RESOLVED_CONFIG)).unwrap(), &p.first.out).unwrap();
    let model = ws.load_checkpoint(&r.teacher.checkpoint).unwrap();
    let test = ws.load_split(SplitRole::Test).unwrap();
    let image = test.image(0).unwrap();
    let class = test.labels()[0];
    let layer = model.default_capture_layer().unwrap();
    let batch = image.clone().insert_axis(Axis(0));
    let (_, stacks) = model.forward_with_activations(batch.view(), &layer).unwrap();
    let acts: Array3<f64> = stacks[0].maps.clone();
    let base = score_cam_from_activations(&model, &image, class, &layer, &acts, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut order: Vec<usize> = (0..acts.dim().0).collect();
    let mut invariant = 0;
    for _ in 0..20 {
        order.shuffle(&mut rng);
        let out = score_cam_from_activations(&model, &image, class, &layer, &acts.select(Axis(0), &order), 32).unwrap();
        invariant += (out.map == base.map) as usize;
    }

    let pass = images == 50 && pointing >= 0.8 && bad_range == 0 && maps == 150 && invariant == 20;
    report(
        6,
        pass,
        format!(
            "teacher pointing {pointing:.3} on {images} test images, {bad_range}/{maps} maps outside [0,1] span, {invariant}/20 permutations bitwise equal"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_attention_alignment() {
    let p = pipeline();
    let rows = p.first.explain.report.alignment.as_ref().unwrap();
    let student = rows.iter().find(|a| a.model == "student").unwrap();
    let baseline = rows.iter().find(|a| a.model == "baseline").unwrap();
    let pass = student.pairs == 50 && student.mean_pearson >= 0.3;
    let direction = if student.mean_pearson >= baseline.mean_pearson { "KD >= baseline" } else { "KD < baseline" };
    report(
        7,
        pass,
        format!(
            "mean teacher-student pearson: KD {:.3}, baseline {:.3} ({direction}, informational); IoU@0.5 KD {:.3}, baseline {:.3}",
            student.mean_pearson, baseline.mean_pearson, student.mean_iou, baseline.mean_iou
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_reproducibility_and_provenance() {
    let p = pipeline();
    let mut differing = Vec::new();
    for f in REPORTS {
        if sha256(&p.first.out.join(f)) != sha256(&p.second.out.join(f)) {
            differing.push(f);
        }
    }
    let mut unchanged = true;
    for run in [&p.first, &p.second] {
        let s = &run.distill.summary;
        unchanged &= s.teacher_hash_before == s.teacher_hash_after
            && s.teacher_hash_before == run.teacher.report.checkpoint_hash;
    }
    let pass = differing.is_empty() && unchanged;
    report(
        8,
        pass,
        format!("{} of {} reports hash-equal on rerun from persisted configs, teacher hash unchanged across phase 2: {unchanged}", REPORTS.len() - differing.len(), REPORTS.len()),
    );
    assert!(pass, "differing reports: {differing:?}");
}
