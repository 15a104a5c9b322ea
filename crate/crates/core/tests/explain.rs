use ndarray::{Array2, Array3, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xkd_core::data::BoundingBox;
use xkd_core::explain::{
    alignment, colormap, overlay, pearson, render_panels, score_cam, score_cam_from_activations, tensor_to_rgb, HeatMap,
};
use xkd_core::model::{build_toy_student, build_toy_teacher, ConvNet, InputShape, ToyConfig};
use xkd_core::Error;

fn net() -> ConvNet {
    build_toy_student(
        3,
        ToyConfig {
            input: InputShape::new(3, 16, 16),
            ..Default::default()
        },
    )
    .unwrap()
}

fn image(rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_fn((3, 16, 16), |_| rng.random::<f64>())
}

fn heat(values: Array2<f64>) -> HeatMap {
    HeatMap {
        values,
        target_class: 0,
        source_model: "m".into(),
        source_layer: "conv1".into(),
        degenerate: false,
    }
}

/// A `[K × 8 × 8]` stack with a couple of constant channels mixed in.
fn activations(rng: &mut ChaCha8Rng, k: usize) -> Array3<f64> {
    let mut a = Array3::from_shape_fn((k, 8, 8), |_| rng.random_range(0.0..2.0));
    a.index_axis_mut(Axis(0), 0).fill(0.0);
    a.index_axis_mut(Axis(0), k / 2).fill(0.7);
    a
}

#[test]
fn single_channel_map_is_its_normalized_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = net();
    let a = Array3::from_shape_fn((1, 16, 16), |_| rng.random_range(-1.0..1.0));
    let out = score_cam_from_activations(&m, &image(&mut rng), 1, "conv1", &a, 8).unwrap();
    assert_eq!(out.weights, vec![1.0]);
    let relu = a.index_axis(Axis(0), 0).mapv(|v| v.max(0.0));
    let (lo, hi) = relu.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    for (got, v) in out.map.values.iter().zip(relu.iter()) {
        assert!((got - (v - lo) / (hi - lo)).abs() < 1e-15);
    }
    assert!(!out.map.degenerate);
}

#[test]
fn constant_stack_gives_a_degenerate_zero_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = net();
    for fill in [0.0, 0.4] {
        let a = Array3::from_elem((5, 8, 8), fill);
        let out = score_cam_from_activations(&m, &image(&mut rng), 0, "conv2", &a, 8).unwrap();
        assert!(out.map.degenerate);
        assert!(out.map.values.iter().all(|&v| v == 0.0));
        assert_eq!(out.map.shape(), (16, 16));
        assert!(out.weights.iter().all(|&w| w == 0.0));
    }
}

#[test]
fn channel_permutations_give_identical_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = net();
    let img = image(&mut rng);
    let a = activations(&mut rng, 12);
    let base = score_cam_from_activations(&m, &img, 2, "conv2", &a, 5).unwrap();
    let mut perm: Vec<usize> = (0..12).collect();
    for _ in 0..20 {
        perm.shuffle(&mut rng);
        let permuted = a.select(Axis(0), &perm);
        let out = score_cam_from_activations(&m, &img, 2, "conv2", &permuted, 5).unwrap();
        assert_eq!(out.map, base.map);
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(out.weights[i].to_bits(), base.weights[p].to_bits());
        }
    }
}

#[test]
fn weights_range_and_model_immutability() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = net();
    let hash = m.parameter_hash();
    for _ in 0..10 {
        let img = image(&mut rng);
        let a = activations(&mut rng, 9);
        let out = score_cam_from_activations(&m, &img, 1, "conv2", &a, 4).unwrap();
        assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(out.weights[0], 0.0);
        assert_eq!(out.weights[4], 0.0);
        let min = out.map.values.iter().copied().fold(f64::MAX, f64::min);
        let max = out.map.values.iter().copied().fold(f64::MIN, f64::max);
        assert_eq!((min, max), (0.0, 1.0));

        for layer in ["conv1", "conv2"] {
            let cam = score_cam(&m, &img, 0, layer, 16).unwrap();
            if !cam.map.degenerate {
                let lo = cam.map.values.iter().copied().fold(f64::MAX, f64::min);
                let hi = cam.map.values.iter().copied().fold(f64::MIN, f64::max);
                assert_eq!((lo, hi), (0.0, 1.0));
            }
        }
    }
    assert_eq!(m.parameter_hash(), hash);
}

#[test]
fn bad_requests_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = net();
    let img = image(&mut rng);
    assert!(matches!(score_cam(&m, &img, 3, "conv2", 8), Err(Error::ClassOutOfRange { .. })));
    assert!(matches!(score_cam(&m, &img, 0, "conv7", 8), Err(Error::UnknownLayer { .. })));
    let wrong = Array3::zeros((3, 8, 8));
    assert!(score_cam(&m, &wrong, 0, "conv2", 8).is_err());
}

#[test]
fn deeper_model_maps_have_input_resolution() {
    let t = build_toy_teacher(0, ToyConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = Array3::from_shape_fn((3, 32, 32), |_| rng.random::<f64>());
    let cam = score_cam(&t, &img, 1, "conv3", 32).unwrap();
    assert_eq!(cam.map.shape(), (32, 32));
    assert_eq!(cam.weights.len(), 32);
    assert_eq!(cam.map.source_layer, "conv3");
}

#[test]
fn alignment_identity_inverse_and_pointing() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v = Array2::from_shape_fn((16, 16), |_| rng.random::<f64>());
    let a = heat(v.clone());
    let same = alignment(&a, &a, None).unwrap();
    assert!((same.pearson - 1.0).abs() < 1e-12);
    assert_eq!(same.iou_at_half, 1.0);
    assert_eq!(same.pointing_hit, None);
    let inv = alignment(&a, &heat(v.mapv(|x| 1.0 - x)), None).unwrap();
    assert!((inv.pearson + 1.0).abs() < 1e-12);

    let mut peak = Array2::zeros((16, 16));
    peak[[3, 12]] = 1.0;
    let boxed = BoundingBox {
        x0: 10,
        y0: 1,
        x1: 13,
        y1: 4,
    };
    assert_eq!(alignment(&a, &heat(peak.clone()), Some(&boxed)).unwrap().pointing_hit, Some(true));
    let elsewhere = BoundingBox {
        x0: 0,
        y0: 0,
        x1: 2,
        y1: 2,
    };
    assert_eq!(alignment(&a, &heat(peak), Some(&elsewhere)).unwrap().pointing_hit, Some(false));
    assert!(alignment(&a, &heat(Array2::zeros((8, 8))), None).is_err());
}

#[test]
fn independent_random_maps_are_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut total = 0.0;
    for _ in 0..100 {
        let a: Vec<f64> = (0..64 * 64).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..64 * 64).map(|_| rng.random()).collect();
        let r = pearson(&a, &b);
        assert!(r.abs() < 0.1);
        total += r;
    }
    assert!((total / 100.0).abs() < 0.1);
}

#[test]
fn sidecar_files_round_trip_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut m = heat(Array2::from_shape_fn((7, 5), |_| rng.random::<f64>()));
    m.values[[0, 0]] = 0.0;
    m.values[[1, 1]] = 1.0;
    m.values[[2, 2]] = 1e-300;
    m.source_model = "toy-student".into();
    m.target_class = 2;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.heatmap");
    m.save(&path).unwrap();
    assert_eq!(HeatMap::load(&path).unwrap(), m);
}

#[test]
fn panels_are_original_then_overlays_in_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = Array3::from_shape_fn((3, 6, 4), |_| rng.random::<f64>());
    let t = heat(Array2::from_shape_fn((6, 4), |_| rng.random::<f64>()));
    let s = heat(Array2::zeros((6, 4)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.png");
    render_panels(&img, &[&t, &s], &path).unwrap();
    let png = image::open(&path).unwrap().to_rgb8();
    assert_eq!(png.dimensions(), (12, 6));
    let base = tensor_to_rgb(&img);
    let expected = [base.clone(), overlay(&base, &t).unwrap(), overlay(&base, &s).unwrap()];
    for (k, panel) in expected.iter().enumerate() {
        for (x, y, px) in panel.enumerate_pixels() {
            assert_eq!(png.get_pixel(x + 4 * k as u32, y), px);
        }
    }
    // A zero map tints every pixel with the colormap's first entry.
    let zero = colormap(0.0);
    for (x, y, px) in expected[2].enumerate_pixels() {
        let b = base.get_pixel(x, y);
        for c in 0..3 {
            assert_eq!(px[c], ((b[c] as f64 + zero[c] as f64) / 2.0).round() as u8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alignment_is_symmetric(a in prop::collection::vec(0.0f64..1.0, 36), b in prop::collection::vec(0.0f64..1.0, 36)) {
        let (ma, mb) = (
            heat(Array2::from_shape_vec((6, 6), a).unwrap()),
            heat(Array2::from_shape_vec((6, 6), b).unwrap()),
        );
        let ab = alignment(&ma, &mb, None).unwrap();
        let ba = alignment(&mb, &ma, None).unwrap();
        prop_assert!((ab.pearson - ba.pearson).abs() < 1e-15);
        prop_assert_eq!(ab.iou_at_half, ba.iou_at_half);
        prop_assert!((-1.0..=1.0).contains(&ab.pearson));
        prop_assert!((0.0..=1.0).contains(&ab.iou_at_half));
    }

    #[test]
    fn non_degenerate_maps_span_the_unit_interval(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array3::from_shape_fn((k, 4, 4), |_| rng.random_range(-1.0..1.0));
        let out = score_cam_from_activations(&net(), &image(&mut rng), 0, "conv2", &a, 3).unwrap();
        let lo = out.map.values.iter().copied().fold(f64::MAX, f64::min);
        let hi = out.map.values.iter().copied().fold(f64::MIN, f64::max);
        if out.map.degenerate {
            prop_assert_eq!((lo, hi), (0.0, 0.0));
        } else {
            prop_assert_eq!((lo, hi), (0.0, 1.0));
        }
    }
}
