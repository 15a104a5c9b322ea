mod common;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xkd_core::metrics::{auc_one_vs_rest, confusion_matrix, f1_score, MetricReport};

/// Random scores drawn from a small grid so ties are common, with at least
/// one label of each class.
fn tied_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=200);
    let levels = rng.random_range(1..=20);
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
    labels[0] = true;
    labels[1] = false;
    (scores, labels)
}

#[test]
fn fast_auc_equals_pairwise_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (scores, labels) = tied_instance(&mut rng);
        assert_eq!(auc_one_vs_rest(&scores, &labels), common::brute_force_auc(&scores, &labels));
    }
}

#[test]
fn auc_anchor_cases() {
    assert_eq!(auc_one_vs_rest(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Some(0.75));
    assert_eq!(auc_one_vs_rest(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
    assert_eq!(auc_one_vs_rest(&[0.3; 6], &[true, false, true, false, true, false]), Some(0.5));
    assert_eq!(auc_one_vs_rest(&[0.3, 0.4], &[true, true]), None);
}

#[test]
fn random_scorer_has_chance_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let labels: Vec<bool> = (0..2000).map(|i| i % 2 == 0).collect();
    let scores: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
    let auc = auc_one_vs_rest(&scores, &labels).unwrap();
    assert!((auc - 0.5).abs() <= 0.05, "AUC {auc}");
}

#[test]
fn f1_cases() {
    assert_eq!(f1_score(1, 1, 1), 0.5);
    assert_eq!(f1_score(3, 0, 0), 1.0);
    assert_eq!(f1_score(0, 0, 0), 0.0);
}

#[test]
fn report_invariants_and_persistence() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let truth: Vec<usize> = (0..90).map(|i| i % 3).collect();
    let scores = Array2::from_shape_fn((90, 3), |_| rng.random::<f64>());
    let r = MetricReport::from_scores(&scores, &truth, &names).unwrap();
    let trace: usize = (0..3).map(|i| r.confusion[i][i]).sum();
    assert_eq!(r.accuracy, trace as f64 / 90.0);
    for (c, row) in r.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), truth.iter().filter(|&&t| t == c).count());
    }
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    assert!(in_unit(r.accuracy) && in_unit(r.macro_f1) && in_unit(r.macro_auc.unwrap()));
    let mean_auc = r.per_class_auc.iter().map(|a| a.unwrap()).sum::<f64>() / 3.0;
    assert!((r.macro_auc.unwrap() - mean_auc).abs() < 1e-15);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    r.save(&path).unwrap();
    assert_eq!(MetricReport::load(&path).unwrap(), r);

    let perfect = Array2::from_shape_fn((90, 3), |(i, c)| if truth[i] == c { 0.9 } else { 0.1 });
    let p = MetricReport::from_scores(&perfect, &truth, &names).unwrap();
    assert_eq!((p.accuracy, p.macro_f1, p.macro_auc), (1.0, 1.0, Some(1.0)));

    assert!(MetricReport::from_scores(&array![[0.1, 0.9]], &[0], &names).is_err());
    assert_eq!(confusion_matrix(&[0, 1, 1], &[0, 0, 1], 2), vec![vec![1, 0], vec![1, 1]]);
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_maps(
        raw in prop::collection::vec((0u8..30, any::<bool>()), 2..120),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let mut labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 30.0).collect();
        let base = auc_one_vs_rest(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (scale * s).exp() + shift).collect();
        prop_assert_eq!(auc_one_vs_rest(&mapped, &labels).unwrap(), base);
        let cubed: Vec<f64> = scores.iter().map(|s| (s - 0.5).powi(3)).collect();
        prop_assert_eq!(auc_one_vs_rest(&cubed, &labels).unwrap(), base);
    }

    #[test]
    fn auc_complement_symmetry(raw in prop::collection::vec((0u8..30, any::<bool>()), 2..120)) {
        let mut labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = auc_one_vs_rest(&scores, &labels).unwrap();
        let b = auc_one_vs_rest(&scores, &flipped).unwrap();
        prop_assert!((a - (1.0 - b)).abs() < 1e-15);
    }
}
