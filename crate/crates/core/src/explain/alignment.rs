use serde::{Deserialize, Serialize};

use super::HeatMap;
use crate::data::BoundingBox;
use crate::error::{Error, Result};

/// How closely a student heatmap follows a reference (teacher) heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub pearson: f64,
    pub iou_at_half: f64,
    /// Whether the student map's argmax lies in the ground-truth box; `None`
    /// when no box is known.
    pub pointing_hit: Option<bool>,
}

/// Pearson correlation of two equally long samples; 0 if either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() || a.len() != b.len() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Pixels at or above half the map's maximum. An all-zero map selects
/// nothing.
fn half_max_mask(map: &HeatMap) -> Vec<bool> {
    let max = map.values.iter().copied().fold(0.0, f64::max);
    map.values.iter().map(|&v| max > 0.0 && v >= 0.5 * max).collect()
}

/// Scores `student` against `reference`. Two empty half-max masks count as
/// a perfect overlap.
pub fn alignment(reference: &HeatMap, student: &HeatMap, region: Option<&BoundingBox>) -> Result<AlignmentScore> {
    if reference.shape() != student.shape() {
        return Err(Error::shape(
            "alignment heatmaps",
            format!("{:?}", reference.shape()),
            format!("{:?}", student.shape()),
        ));
    }
    let a: Vec<f64> = reference.values.iter().copied().collect();
    let b: Vec<f64> = student.values.iter().copied().collect();
    let (ma, mb) = (half_max_mask(reference), half_max_mask(student));
    let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let union = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
    let iou_at_half = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    let pointing_hit = region.map(|r| {
        let (y, x) = student.argmax();
        r.contains(x, y)
    });
    Ok(AlignmentScore {
        pearson: pearson(&a, &b),
        iou_at_half,
        pointing_hit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn map(values: Array2<f64>) -> HeatMap {
        HeatMap {
            values,
            target_class: 0,
            source_model: "m".into(),
            source_layer: "conv1".into(),
            degenerate: false,
        }
    }

    #[test]
    fn identity_and_inverse() {
        let t = map(array![[0.0, 0.2, 1.0], [0.4, 0.9, 0.1]]);
        let same = alignment(&t, &t, None).unwrap();
        assert!((same.pearson - 1.0).abs() < 1e-12);
        assert_eq!(same.iou_at_half, 1.0);
        assert_eq!(same.pointing_hit, None);
        let inv = map(t.values.mapv(|v| 1.0 - v));
        assert!((alignment(&t, &inv, None).unwrap().pearson + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_map_has_zero_pearson() {
        let t = map(array![[0.0, 1.0], [0.5, 0.2]]);
        let c = map(Array2::zeros((2, 2)));
        let s = alignment(&t, &c, None).unwrap();
        assert_eq!(s.pearson, 0.0);
        assert_eq!(s.iou_at_half, 0.0);
    }

    #[test]
    fn pointing_uses_student_argmax() {
        let t = map(array![[1.0, 0.0], [0.0, 0.0]]);
        let s = map(array![[0.0, 0.0], [0.0, 1.0]]);
        let hit = BoundingBox { x0: 1, y0: 1, x1: 1, y1: 1 };
        let miss = BoundingBox { x0: 0, y0: 0, x1: 0, y1: 0 };
        assert_eq!(alignment(&t, &s, Some(&hit)).unwrap().pointing_hit, Some(true));
        assert_eq!(alignment(&t, &s, Some(&miss)).unwrap().pointing_hit, Some(false));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = map(Array2::zeros((2, 2)));
        let b = map(Array2::zeros((2, 3)));
        assert!(alignment(&a, &b, None).is_err());
    }
}
