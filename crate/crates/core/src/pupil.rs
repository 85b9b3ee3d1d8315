//! Pupil localization (direct least-squares ellipse fit) and evaluation
//! metrics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{SegmentationMap, NUM_CLASSES, PUPIL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    /// Semi-major axis.
    pub a: f64,
    /// Semi-minor axis.
    pub b: f64,
    /// Direction of the major axis, radians in `[0, pi)`.
    pub angle: f64,
}

/// Fits an ellipse to at least six points with the conic constraint
/// `4ac - b^2 = 1`, solved in the numerically stable reduced form
/// (Halir & Flusser) on centred, scaled coordinates.
pub fn fit_ellipse(points: &[(f64, f64)]) -> Result<Ellipse> {
    if points.len() < 6 {
        return Err(Error::Degenerate(format!("ellipse fit needs 6 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let scale = (points.iter().map(|p| (p.0 - mx).powi(2) + (p.1 - my).powi(2)).sum::<f64>() / (2.0 * n)).sqrt();
    if !(scale > 1e-12) {
        return Err(Error::Degenerate("all points coincide".into()));
    }

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for &(px, py) in points {
        let (x, y) = ((px - mx) / scale, (py - my) / scale);
        let quad = Vector3::new(x * x, x * y, y * y);
        let lin = Vector3::new(x, y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Degenerate("points are collinear".into()))?;
    let t = -(s3_inv * s2.transpose());
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]].
    let reduced = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for ev in reduced.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * (1.0 + ev.re.abs()) {
            continue;
        }
        let lambda = ev.re;
        let svd = (reduced - Matrix3::identity() * lambda).svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("eigen solve failed".into()))?;
        let k = svd.singular_values.imin();
        let v: Vector3<f64> = v_t.row(k).transpose();
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 1e-12 * v.norm_squared() && best.as_ref().is_none_or(|(l, _)| lambda.abs() < l.abs()) {
            best = Some((lambda, v));
        }
    }
    let (_, a1) = best.ok_or_else(|| Error::Degenerate("no elliptical solution".into()))?;
    let a2 = t * a1;
    let (ca, cb, cc, cd, ce, cf) = (a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]);

    let det = 4.0 * ca * cc - cb * cb;
    let x0 = (cb * ce - 2.0 * cc * cd) / det;
    let y0 = (cb * cd - 2.0 * ca * ce) / det;
    let f0 = ca * x0 * x0 + cb * x0 * y0 + cc * y0 * y0 + cd * x0 + ce * y0 + cf;
    let q = nalgebra::Matrix2::new(ca, cb / 2.0, cb / 2.0, cc);
    let eig = q.symmetric_eigen();
    let (ax0, ax1) = (-f0 / eig.eigenvalues[0], -f0 / eig.eigenvalues[1]);
    if !(ax0 > 0.0 && ax1 > 0.0 && ax0.is_finite() && ax1.is_finite()) {
        return Err(Error::Degenerate("fitted conic is not a real ellipse".into()));
    }
    // The conic's overall sign is arbitrary, so rank axes by length.
    let (i_major, ax2, bx2) = if ax0 >= ax1 { (0, ax0, ax1) } else { (1, ax1, ax0) };
    let dir = eig.eigenvectors.column(i_major);
    let angle = dir[1].atan2(dir[0]).rem_euclid(std::f64::consts::PI);
    Ok(Ellipse {
        center: (x0 * scale + mx, y0 * scale + my),
        a: ax2.sqrt() * scale,
        b: bx2.sqrt() * scale,
        angle: if angle >= std::f64::consts::PI { 0.0 } else { angle },
    })
}

/// Centers of pupil pixels that have a 4-neighbour of another class.
pub fn pupil_boundary(seg: &SegmentationMap) -> Vec<(f64, f64)> {
    let (w, h) = (seg.width(), seg.height());
    let mut pts = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if seg.get(x, y) != PUPIL {
                continue;
            }
            let edge = (x > 0 && seg.get(x - 1, y) != PUPIL)
                || (x + 1 < w && seg.get(x + 1, y) != PUPIL)
                || (y > 0 && seg.get(x, y - 1) != PUPIL)
                || (y + 1 < h && seg.get(x, y + 1) != PUPIL);
            if edge {
                pts.push((x as f64 + 0.5, y as f64 + 0.5));
            }
        }
    }
    pts
}

/// Below this many pupil pixels the centroid is used instead of a fit.
pub const MIN_FIT_PIXELS: usize = 20;

/// Pupil center from a label map: ellipse fit to the pupil boundary, the
/// pupil centroid for tiny or unfittable pupils, `None` without pupil.
pub fn pupil_center(seg: &SegmentationMap) -> Option<(f64, f64)> {
    let (w, h) = (seg.width(), seg.height());
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if seg.get(x, y) == PUPIL {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let centroid = (sx / n as f64, sy / n as f64);
    if n < MIN_FIT_PIXELS {
        return Some(centroid);
    }
    match fit_ellipse(&pupil_boundary(seg)) {
        Ok(e) if e.center.0.is_finite() && e.center.1.is_finite() => Some(e.center),
        _ => Some(centroid),
    }
}

/// Mean IoU over classes present in either map.
pub fn miou(pred: &SegmentationMap, truth: &SegmentationMap) -> Result<f64> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::Dimension(format!(
            "mIoU between {}x{} and {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut inter = [0usize; NUM_CLASSES];
    let mut union = [0usize; NUM_CLASSES];
    for (&p, &t) in pred.classes().iter().zip(truth.classes()) {
        if p == t {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[t as usize] += 1;
        }
    }
    let ious: Vec<f64> = (0..NUM_CLASSES)
        .filter(|&c| union[c] > 0)
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Euclidean pupil error. Both absent counts as a perfect match; exactly one
/// absent yields `None` and must be tallied separately.
pub fn pupil_error(pred: Option<(f64, f64)>, truth: Option<(f64, f64)>) -> Option<f64> {
    match (pred, truth) {
        (None, None) => Some(0.0),
        (Some(p), Some(t)) => Some((p.0 - t.0).hypot(p.1 - t.1)),
        _ => None,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PupilStats {
    pub mean: f64,
    pub std: f64,
    /// Frames where both or neither center exists.
    pub count: usize,
    /// Frames where exactly one of the two centers exists.
    pub mismatched: usize,
}

pub fn pupil_stats(errors: &[Option<f64>]) -> PupilStats {
    let vals: Vec<f64> = errors.iter().flatten().copied().collect();
    let mismatched = errors.len() - vals.len();
    if vals.is_empty() {
        return PupilStats {
            mismatched,
            ..Default::default()
        };
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    PupilStats {
        mean,
        std: var.sqrt(),
        count: vals.len(),
        mismatched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ellipse_points(cx: f64, cy: f64, a: f64, b: f64, angle: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64 + 0.1;
                let (u, v) = (a * t.cos(), b * t.sin());
                (cx + u * angle.cos() - v * angle.sin(), cy + u * angle.sin() + v * angle.cos())
            })
            .collect()
    }

    #[test]
    fn circle_recovered() {
        let e = fit_ellipse(&ellipse_points(10.0, 10.0, 5.0, 5.0, 0.0, 12)).unwrap();
        assert!((e.center.0 - 10.0).abs() < 1e-6 && (e.center.1 - 10.0).abs() < 1e-6);
        assert!((e.a - 5.0).abs() < 1e-6 && (e.b - 5.0).abs() < 1e-6);
    }

    #[test]
    fn rotated_ellipse_recovered() {
        let e = fit_ellipse(&ellipse_points(3.0, -2.0, 8.0, 3.0, PI / 6.0, 20)).unwrap();
        assert!((e.center.0 - 3.0).abs() < 1e-6 && (e.center.1 + 2.0).abs() < 1e-6);
        assert!((e.a - 8.0).abs() < 1e-6 && (e.b - 3.0).abs() < 1e-6);
        assert!((e.angle - PI / 6.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(fit_ellipse(&ellipse_points(0.0, 0.0, 2.0, 1.0, 0.0, 5)).is_err());
        let line: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64)).collect();
        assert!(fit_ellipse(&line).is_err());
    }

    #[test]
    fn miou_examples() {
        let a = SegmentationMap::new(4, 1, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(miou(&a, &a).unwrap(), 1.0);
        // Class 1 everywhere vs class 2 everywhere: both classes score 0.
        let ones = SegmentationMap::new(2, 2, vec![1; 4]).unwrap();
        let twos = SegmentationMap::new(2, 2, vec![2; 4]).unwrap();
        assert_eq!(miou(&ones, &twos).unwrap(), 0.0);
        // Rectangles of class 3 offset by half their width on a 8x4 map.
        let rect = |x0: usize| {
            let c = (0..32).map(|i| if (x0..x0 + 4).contains(&(i % 8)) { 3 } else { 0 }).collect();
            SegmentationMap::new(8, 4, c).unwrap()
        };
        let (p, t) = (rect(0), rect(2));
        // class 3: 8 / 24; class 0: 8 / 24.
        assert!((miou(&p, &t).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(miou(&a, &ones).is_err());
    }

    #[test]
    fn pupil_error_rules() {
        assert_eq!(pupil_error(None, None), Some(0.0));
        assert_eq!(pupil_error(Some((0.0, 0.0)), None), None);
        assert_eq!(pupil_error(Some((0.0, 0.0)), Some((3.0, 4.0))), Some(5.0));
        let s = pupil_stats(&[Some(1.0), Some(3.0), None]);
        assert_eq!((s.mean, s.std, s.count, s.mismatched), (2.0, 1.0, 2, 1));
    }

    #[test]
    fn pupil_center_small_and_absent() {
        let mut m = SegmentationMap::background(10, 10);
        assert_eq!(pupil_center(&m), None);
        m.set(2, 3, PUPIL);
        m.set(3, 3, PUPIL);
        assert_eq!(pupil_center(&m), Some((3.0, 3.5)));
    }

    proptest! {
        #[test]
        fn fit_is_translation_equivariant(
            a in 2.0f64..10.0, ratio in 0.3f64..0.95, angle in 0.0f64..3.1,
            tx in -50.0f64..50.0, ty in -50.0f64..50.0,
        ) {
            let pts = ellipse_points(0.0, 0.0, a, a * ratio, angle, 16);
            let moved: Vec<_> = pts.iter().map(|&(x, y)| (x + tx, y + ty)).collect();
            let e0 = fit_ellipse(&pts).unwrap();
            let e1 = fit_ellipse(&moved).unwrap();
            prop_assert!((e1.center.0 - e0.center.0 - tx).abs() < 1e-6);
            prop_assert!((e1.center.1 - e0.center.1 - ty).abs() < 1e-6);
            prop_assert!((e1.a - e0.a).abs() < 1e-6 && (e1.b - e0.b).abs() < 1e-6);
        }

        #[test]
        fn axes_invariant_under_rotation(
            a in 2.0f64..10.0, ratio in 0.3f64..0.9, angle in 0.0f64..3.1, rot in 0.0f64..6.28,
        ) {
            let pts = ellipse_points(1.0, 2.0, a, a * ratio, angle, 16);
            let (s, c) = rot.sin_cos();
            let turned: Vec<_> = pts.iter().map(|&(x, y)| (c * x - s * y, s * x + c * y)).collect();
            let e0 = fit_ellipse(&pts).unwrap();
            let e1 = fit_ellipse(&turned).unwrap();
            prop_assert!((e1.a - e0.a).abs() < 1e-6 && (e1.b - e0.b).abs() < 1e-6);
            let expected = (e0.angle + rot).rem_euclid(PI);
            let diff = (e1.angle - expected).abs();
            prop_assert!(diff < 1e-6 || (PI - diff) < 1e-6);
        }

        #[test]
        fn miou_symmetric(v in proptest::collection::vec(0u8..4, 16), u in proptest::collection::vec(0u8..4, 16)) {
            let a = SegmentationMap::new(4, 4, v).unwrap();
            let b = SegmentationMap::new(4, 4, u).unwrap();
            prop_assert_eq!(miou(&a, &b).unwrap(), miou(&b, &a).unwrap());
            prop_assert_eq!(miou(&a, &a).unwrap(), 1.0);
        }
    }
}
