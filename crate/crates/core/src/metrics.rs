//! Registration metrics: RMSE-based recall, inlier ratio, rotation and translation error.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZeroRegError};
use crate::point_matching::PointCorrespondences;
use crate::registration::RigidTransform;

/// Registration succeeds below this RMSE (meters).
pub const RMSE_THRESHOLD: f64 = 0.2;
/// A correspondence is correct below this residual under the true transform (meters).
pub const INLIER_TAU: f64 = 0.1;
pub const ROTATION_ACC_DEGREES: [f64; 3] = [5.0, 10.0, 45.0];
pub const TRANSLATION_ACC_METERS: [f64; 3] = [0.05, 0.10, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub rmse: f64,
    pub registered: bool,
    pub inlier_ratio: f64,
    pub rotation_error: f64,
    pub translation_error: f64,
}

impl PairEvaluation {
    pub fn new(
        t_est: &RigidTransform,
        t_gt: &RigidTransform,
        overlap: &[Point3<f64>],
        corr: &PointCorrespondences,
    ) -> Result<Self> {
        let rmse = rmse(t_est, t_gt, overlap)?;
        let (rotation_error, translation_error) = rotation_translation_error(t_est, t_gt);
        Ok(Self {
            rmse,
            registered: rmse < RMSE_THRESHOLD,
            inlier_ratio: if corr.is_empty() {
                0.0
            } else {
                inlier_ratio(corr, t_gt, INLIER_TAU)?
            },
            rotation_error,
            translation_error,
        })
    }
}

pub fn rmse(t_est: &RigidTransform, t_gt: &RigidTransform, points: &[Point3<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(ZeroRegError::EmptyInput("rmse over no points".into()));
    }
    let sum: f64 = points
        .iter()
        .map(|p| (t_est.apply(p) - t_gt.apply(p)).norm_squared())
        .sum();
    Ok((sum / points.len() as f64).sqrt())
}

pub fn registration_recall(evals: &[PairEvaluation]) -> Result<f64> {
    if evals.is_empty() {
        return Err(ZeroRegError::EmptyInput("no evaluations".into()));
    }
    Ok(evals.iter().filter(|e| e.registered).count() as f64 / evals.len() as f64)
}

pub fn inlier_ratio(corr: &PointCorrespondences, t_gt: &RigidTransform, tau: f64) -> Result<f64> {
    if corr.is_empty() {
        return Err(ZeroRegError::EmptyInput("no correspondences".into()));
    }
    let good = corr
        .pairs
        .iter()
        .filter(|m| (t_gt.apply(&m.source_point) - m.target_point).norm() < tau)
        .count();
    Ok(good as f64 / corr.len() as f64)
}

/// Geodesic rotation angle (degrees) and translation distance (meters).
///
/// The angle is `arccos((tr(R_gtᵀ R_est) − 1) / 2)`, evaluated as `atan2(sin, cos)`
/// so that tiny angles are not lost to the flat top of `arccos`.
pub fn rotation_translation_error(t_est: &RigidTransform, t_gt: &RigidTransform) -> (f64, f64) {
    let m = t_gt.rotation.transpose() * t_est.rotation;
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() / 2.0;
    let re = sin.atan2(cos).to_degrees();
    (re, (t_est.translation - t_gt.translation).norm())
}

/// Fraction of values strictly below each threshold.
pub fn accuracy_at(values: &[f64], thresholds: &[f64]) -> Vec<f64> {
    thresholds
        .iter()
        .map(|t| {
            if values.is_empty() {
                0.0
            } else {
                values.iter().filter(|v| **v < *t).count() as f64 / values.len() as f64
            }
        })
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}

/// Aggregate over a suite. Failed pairs count in the recall denominator only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub pairs: usize,
    pub failures: usize,
    pub rr: f64,
    pub mean_ir: f64,
    pub re_mean: f64,
    pub re_median: f64,
    pub te_mean: f64,
    pub te_median: f64,
    pub acc_at: BTreeMap<String, f64>,
}

impl SuiteSummary {
    pub fn from_evaluations(evals: &[PairEvaluation], failures: usize) -> Self {
        let pairs = evals.len() + failures;
        let registered = evals.iter().filter(|e| e.registered).count();
        let re: Vec<f64> = evals.iter().map(|e| e.rotation_error).collect();
        let te: Vec<f64> = evals.iter().map(|e| e.translation_error).collect();
        let ir: Vec<f64> = evals.iter().map(|e| e.inlier_ratio).collect();
        // Accuracy is over all pairs; failures never count as accurate.
        let scale = if pairs == 0 {
            0.0
        } else {
            evals.len() as f64 / pairs as f64
        };
        let mut acc_at = BTreeMap::new();
        for (t, a) in ROTATION_ACC_DEGREES.iter().zip(accuracy_at(&re, &ROTATION_ACC_DEGREES)) {
            acc_at.insert(format!("re_{t}deg"), a * scale);
        }
        for (t, a) in TRANSLATION_ACC_METERS
            .iter()
            .zip(accuracy_at(&te, &TRANSLATION_ACC_METERS))
        {
            acc_at.insert(format!("te_{}cm", (t * 100.0).round()), a * scale);
        }
        Self {
            pairs,
            failures,
            rr: if pairs == 0 {
                0.0
            } else {
                registered as f64 / pairs as f64
            },
            mean_ir: mean(&ir),
            re_mean: mean(&re),
            re_median: median(&re),
            te_mean: mean(&te),
            te_median: median(&te),
            acc_at,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_matching::PointMatch;
    use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rz(deg: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), deg.to_radians()).matrix()
    }

    fn shifted(t: Vector3<f64>) -> RigidTransform {
        RigidTransform::new(Matrix3::identity(), t)
    }

    #[test]
    fn rmse_examples() {
        let pts: Vec<_> = (0..10).map(|i| Point3::new(i as f64, 1.0, -2.0)).collect();
        let gt = RigidTransform::identity();
        assert_eq!(rmse(&gt, &gt, &pts).unwrap(), 0.0);
        let off = shifted(Vector3::new(0.1, 0.0, 0.0));
        assert!((rmse(&off, &gt, &pts).unwrap() - 0.1).abs() < 1e-9);
        assert!(rmse(&gt, &gt, &[]).is_err());

        let est = RigidTransform::new(rz(5.0), Vector3::zeros());
        let mut sum = 0.0;
        for p in &pts {
            let q = rz(5.0) * p.coords;
            sum += (q - p.coords).norm_squared();
        }
        assert!((rmse(&est, &gt, &pts).unwrap() - (sum / 10.0).sqrt()).abs() < 1e-9);
    }

    fn eval(registered: bool) -> PairEvaluation {
        PairEvaluation {
            rmse: if registered { 0.0 } else { 1.0 },
            registered,
            inlier_ratio: 0.0,
            rotation_error: 0.0,
            translation_error: 0.0,
        }
    }

    #[test]
    fn recall_counts() {
        assert_eq!(registration_recall(&[eval(true), eval(true)]).unwrap(), 1.0);
        assert_eq!(registration_recall(&[eval(false)]).unwrap(), 0.0);
        assert_eq!(
            registration_recall(&[eval(true), eval(true), eval(false), eval(true)]).unwrap(),
            0.75
        );
        assert!(registration_recall(&[]).is_err());
    }

    fn corr(pairs: Vec<(Point3<f64>, Point3<f64>)>) -> PointCorrespondences {
        PointCorrespondences {
            pairs: pairs
                .into_iter()
                .enumerate()
                .map(|(i, (p, q))| PointMatch {
                    source: i,
                    target: i,
                    confidence: 1.0,
                    region: None,
                    source_point: p,
                    target_point: q,
                })
                .collect(),
        }
    }

    #[test]
    fn inlier_ratio_counts() {
        let gt = RigidTransform::new(rz(30.0), Vector3::new(1.0, 0.0, 0.0));
        let pts: Vec<_> = (0..4).map(|i| Point3::new(i as f64, 0.5, 0.0)).collect();
        let exact = corr(pts.iter().map(|p| (*p, gt.apply(p))).collect());
        assert_eq!(inlier_ratio(&exact, &gt, 0.1).unwrap(), 1.0);
        let off = Vector3::new(0.0, 0.5, 0.0);
        let all_off = corr(pts.iter().map(|p| (*p, gt.apply(p) + off)).collect());
        assert_eq!(inlier_ratio(&all_off, &gt, 0.1).unwrap(), 0.0);
        let half = corr(
            pts.iter()
                .enumerate()
                .map(|(i, p)| (*p, if i % 2 == 0 { gt.apply(p) } else { gt.apply(p) + off }))
                .collect(),
        );
        assert_eq!(inlier_ratio(&half, &gt, 0.1).unwrap(), 0.5);
        assert!(inlier_ratio(&corr(vec![]), &gt, 0.1).is_err());
    }

    #[test]
    fn rotation_error_examples() {
        let id = RigidTransform::identity();
        assert_eq!(rotation_translation_error(&id, &id), (0.0, 0.0));
        let (re, te) = rotation_translation_error(&RigidTransform::new(rz(90.0), Vector3::zeros()), &id);
        assert!((re - 90.0).abs() < 1e-6);
        assert_eq!(te, 0.0);
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        *q.to_rotation_matrix().matrix()
    }

    #[test]
    fn rotation_error_matches_quaternion_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let (re, _) = rotation_translation_error(
                &RigidTransform::new(a, Vector3::zeros()),
                &RigidTransform::new(b, Vector3::zeros()),
            );
            let qa = UnitQuaternion::from_matrix(&a);
            let qb = UnitQuaternion::from_matrix(&b);
            // Geodesic angle from the quaternion inner product.
            let dot = qa.coords.dot(&qb.coords).abs().min(1.0);
            let oracle = (2.0 * dot.acos()).to_degrees();
            assert!((re - oracle).abs() < 1e-6, "{re} vs {oracle}");
        }
    }

    #[test]
    fn rotation_error_matches_arccos_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let direct = (((b.transpose() * a).trace() - 1.0) / 2.0)
                .clamp(-1.0, 1.0)
                .acos()
                .to_degrees();
            let (re, _) = rotation_translation_error(
                &RigidTransform::new(a, Vector3::zeros()),
                &RigidTransform::new(b, Vector3::zeros()),
            );
            assert!((re - direct).abs() < 1e-6);
        }
        // Tiny angles stay resolvable.
        let tiny = RigidTransform::new(rz(1e-9), Vector3::zeros());
        let (re, _) = rotation_translation_error(&tiny, &RigidTransform::identity());
        assert!((re - 1e-9).abs() < 1e-15);
    }

    #[test]
    fn summary_counts_failures_in_denominator() {
        let evals = vec![eval(true); 9];
        let s = SuiteSummary::from_evaluations(&evals, 1);
        assert_eq!(s.pairs, 10);
        assert_eq!(s.failures, 1);
        assert!((s.rr - 0.9).abs() < 1e-12);
        assert!((s.acc_at["re_5deg"] - 0.9).abs() < 1e-12);
        assert_eq!(
            accuracy_at(&[1.0, 6.0, 50.0], &[5.0, 10.0, 45.0]),
            vec![1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]
        );
    }

    proptest! {
        #[test]
        fn rotation_error_properties(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = RigidTransform::new(random_rotation(&mut rng), Vector3::new(1.0, 2.0, 3.0));
            let b = RigidTransform::new(random_rotation(&mut rng), Vector3::zeros());
            let (ab, _) = rotation_translation_error(&a, &b);
            let (ba, _) = rotation_translation_error(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((0.0..=180.0).contains(&ab));
            prop_assert!(rotation_translation_error(&a, &a).0 < 1e-5);
        }

        #[test]
        fn rmse_is_gauge_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let est = RigidTransform::new(random_rotation(&mut rng), Vector3::new(0.1, 0.0, 0.2));
            let gt = RigidTransform::new(random_rotation(&mut rng), Vector3::new(-0.3, 0.5, 0.0));
            let extra = RigidTransform::new(random_rotation(&mut rng), Vector3::new(2.0, -1.0, 0.5));
            let pts: Vec<_> = (0..20).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
            // Expressing the points in another frame: transform them and right-compose the inverse.
            let moved: Vec<_> = pts.iter().map(|p| extra.apply(p)).collect();
            let a = rmse(&est, &gt, &pts).unwrap();
            let b = rmse(&est.compose(&extra.inverse()), &gt.compose(&extra.inverse()), &moved).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn recall_is_monotone(flags in prop::collection::vec(any::<bool>(), 1..20), flip in 0usize..20) {
            let evals: Vec<_> = flags.iter().map(|f| eval(*f)).collect();
            let mut better = evals.clone();
            let i = flip % better.len();
            better[i] = eval(true);
            prop_assert!(registration_recall(&better).unwrap() >= registration_recall(&evals).unwrap());
        }
    }
}
